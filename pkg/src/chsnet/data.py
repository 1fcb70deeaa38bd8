"""Segmentation samples, the on-disk dataset contract and a synthetic generator.

Dataset directory layout::

    root/images/<id>.pgm            8-bit grayscale slice
    root/lung_masks/<id>.pgm        8-bit lung mask (required)
    root/infection_masks/<id>.pgm   8-bit infection mask (optional)
    root/sources.txt                optional "<id> <source>" lines

Masks are binarized with ``pixel > 127``; images are scaled to ``[0, 1]``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, ShapeError

log = logging.getLogger(__name__)

IMAGE_DIR, LUNG_DIR, INFECTION_DIR = "images", "lung_masks", "infection_masks"
MASK_THRESHOLD = 127
IMAGE_SUFFIXES = (".pgm", ".png")
SPLITS = ("train", "val", "test")


@dataclass
class SegmentationSample:
    """One slice with its lung and infection masks, each ``(w, h, 1)``."""

    id: str
    image: np.ndarray
    lung_mask: np.ndarray
    infection_mask: np.ndarray
    source: str = "default"

    def __post_init__(self):
        shapes = {self.image.shape, self.lung_mask.shape, self.infection_mask.shape}
        if len(shapes) != 1 or self.image.ndim != 3 or self.image.shape[-1] != 1:
            raise ShapeError(f"sample {self.id}: image and masks must share one (w,h,1) shape, got {shapes}")

    def containment(self) -> float:
        """Fraction of infection pixels that lie inside the lung mask (1 if none)."""
        inf = self.infection_mask > 0.5
        n = int(inf.sum())
        return 1.0 if n == 0 else float((inf & (self.lung_mask > 0.5)).sum()) / n


def stack(samples: list[SegmentationSample], dtype=np.float64) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch arrays ``(images, lung_masks, infection_masks)``, each ``(n, w, h, 1)``."""
    if not samples:
        raise ConfigurationError("no samples to stack")
    return (
        np.stack([s.image for s in samples]).astype(dtype),
        np.stack([s.lung_mask for s in samples]).astype(dtype),
        np.stack([s.infection_mask for s in samples]).astype(dtype),
    )


# ------------------------------------------------------------------- split

@dataclass
class DatasetManifest:
    """Sample ids with a disjoint split assignment."""

    root: str
    ids: list[str]
    splits: dict[str, str]
    source: str = "default"
    sources: dict[str, str] = field(default_factory=dict)
    rejected: dict[str, str] = field(default_factory=dict)

    def ids_in(self, split: str) -> list[str]:
        if split not in SPLITS:
            raise ConfigurationError(f"split must be one of {SPLITS}, got {split!r}")
        return [i for i in self.ids if self.splits[i] == split]

    def select(self, samples: list[SegmentationSample], split: str) -> list[SegmentationSample]:
        wanted = set(self.ids_in(split))
        return [s for s in samples if s.id in wanted]


def assign_splits(
    ids: list[str],
    seed: int = 0,
    test_fraction: float = 0.3,
    val_fraction: float = 0.2,
    sources: dict[str, str] | None = None,
    balance: bool = False,
) -> dict[str, str]:
    """Deterministic train/val/test assignment.

    ``test_fraction`` of the ids go to test; ``val_fraction`` of the remainder
    to val.  With ``balance`` the split is drawn separately per source tag so
    every split keeps the global source ratio.
    """
    if not (0 <= test_fraction < 1 and 0 <= val_fraction < 1):
        raise ConfigurationError("split fractions must be in [0, 1)")
    groups: dict[str, list[str]] = {}
    for i in sorted(ids):
        key = (sources or {}).get(i, "default") if balance else "all"
        groups.setdefault(key, []).append(i)
    rng = np.random.default_rng(seed)
    out = {}
    for key in sorted(groups):
        members = groups[key]
        order = [members[k] for k in rng.permutation(len(members))]
        n_test = int(round(test_fraction * len(order)))
        rest = order[n_test:]
        n_val = int(round(val_fraction * len(rest)))
        for i in order[:n_test]:
            out[i] = "test"
        for i in rest[:n_val]:
            out[i] = "val"
        for i in rest[n_val:]:
            out[i] = "train"
    return out


def manifest_for(samples: list[SegmentationSample], root: str = "", seed: int = 0, balance: bool = False,
                 test_fraction: float = 0.3, val_fraction: float = 0.2) -> DatasetManifest:
    ids = sorted(s.id for s in samples)
    sources = {s.id: s.source for s in samples}
    splits = assign_splits(ids, seed, test_fraction, val_fraction, sources, balance)
    tags = sorted(set(sources.values()))
    return DatasetManifest(root, ids, splits, "+".join(tags), sources)


# --------------------------------------------------------------- image I/O

def read_gray(path: str | Path) -> np.ndarray:
    """8-bit grayscale file as a ``(w, h)`` uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def write_gray(path: str | Path, arr: np.ndarray) -> None:
    """Write a ``(w, h)`` or ``(w, h, 1)`` array in ``[0, 255]`` as 8-bit grayscale."""
    a = np.asarray(arr)
    if a.ndim == 3:
        a = a[..., 0]
    Image.fromarray(np.clip(np.rint(a), 0, 255).astype(np.uint8), mode="L").save(path)


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    write_gray(path, (np.asarray(mask) > 0.5) * 255)


def write_probability(path: str | Path, p: np.ndarray, scale: float = 1.0) -> None:
    """Write values in ``[0, scale]`` as 8-bit gray (0 -> 0, scale -> 255)."""
    write_gray(path, np.asarray(p) / scale * 255.0)


def _resize(a: np.ndarray, size: tuple[int, int] | None, resample) -> np.ndarray:
    if size is None or a.shape == tuple(size):
        return a
    # PIL sizes are (columns, rows)
    return np.asarray(Image.fromarray(a).resize((size[1], size[0]), resample=resample))


def load_image(path, size=None) -> np.ndarray:
    """Slice scaled to ``[0, 1]`` and resized bilinearly, shape ``(w, h, 1)``."""
    a = _resize(read_gray(path), size, Image.BILINEAR)
    return (a.astype(np.float64) / 255.0)[..., None]


def load_mask(path, size=None) -> np.ndarray:
    """Mask binarized at 127 and resized by nearest neighbour, shape ``(w, h, 1)``."""
    a = _resize(read_gray(path), size, Image.NEAREST)
    return (a > MASK_THRESHOLD).astype(np.float64)[..., None]


def _find(directory: Path, stem: str) -> Path | None:
    for suffix in IMAGE_SUFFIXES:
        p = directory / (stem + suffix)
        if p.exists():
            return p
    return None


def load_dataset(
    root: str | Path,
    size: tuple[int, int] | None = None,
    seed: int = 0,
    balance: bool = False,
) -> tuple[DatasetManifest, list[SegmentationSample]]:
    """Read every slice under ``root`` and assign deterministic splits.

    Slices without a lung mask are skipped and listed in ``manifest.rejected``;
    slices without an infection mask get an all-zero one.
    """
    root = Path(root)
    img_dir = root / IMAGE_DIR
    if not img_dir.is_dir():
        raise FileNotFoundError(f"{root}: missing {IMAGE_DIR}/ directory")
    sources = {}
    src_file = root / "sources.txt"
    if src_file.exists():
        for line in src_file.read_text().splitlines():
            if line.strip():
                k, v = line.split(None, 1)
                sources[k] = v.strip()
    stems = sorted({p.stem for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES})
    samples, rejected = [], {}
    for stem in stems:
        lung_path = _find(root / LUNG_DIR, stem)
        if lung_path is None:
            rejected[stem] = "missing lung mask"
            log.warning("skipping %s: missing lung mask", stem)
            continue
        image = load_image(_find(img_dir, stem), size)
        lung = load_mask(lung_path, size)
        inf_path = _find(root / INFECTION_DIR, stem)
        infection = load_mask(inf_path, size) if inf_path is not None else np.zeros_like(lung)
        samples.append(SegmentationSample(stem, image, lung, infection, sources.get(stem, root.name or "default")))
    if not samples:
        raise ConfigurationError(f"{root}: no usable samples")
    manifest = manifest_for(samples, str(root), seed, balance)
    manifest.rejected = rejected
    return manifest, samples


def save_dataset(root: str | Path, samples: list[SegmentationSample]) -> None:
    """Write samples in the directory layout :func:`load_dataset` reads."""
    root = Path(root)
    for d in (IMAGE_DIR, LUNG_DIR, INFECTION_DIR):
        (root / d).mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_gray(root / IMAGE_DIR / f"{s.id}.pgm", s.image * 255.0)
        write_mask(root / LUNG_DIR / f"{s.id}.pgm", s.lung_mask)
        write_mask(root / INFECTION_DIR / f"{s.id}.pgm", s.infection_mask)


# ---------------------------------------------------------- tensor sidecar

TNSR_MAGIC = b"TNSR"


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    """Raw sidecar: magic, u32 rank, u32 extents, little-endian float32 values."""
    a = np.asarray(arr)
    with open(path, "wb") as fh:
        fh.write(TNSR_MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != TNSR_MAGIC:
        raise ConfigurationError(f"{path}: not a TNSR file")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    offset = 8 + 4 * ndim
    n = int(np.prod(shape)) if ndim else 1
    if len(raw) != offset + 4 * n:
        raise ConfigurationError(f"{path}: truncated TNSR payload")
    return np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape).copy()


# --------------------------------------------------------------- synthetic

@dataclass
class SynthConfig:
    """Knobs of the synthetic lung/infection generator.

    ``blob_probs[k]`` is the probability of ``k`` infection blobs.
    ``distractor_probs[k]`` is the probability of ``k`` equally bright blobs
    outside the lungs, which only lung context can tell apart from infection.
    """

    blob_probs: tuple[float, ...] = (0.1, 0.3, 0.3, 0.3)
    distractor_probs: tuple[float, ...] = (0.2, 0.4, 0.4)
    two_lung_prob: float = 0.8
    background: float = 0.15
    lung_intensity: float = 0.45
    blob_intensity: float = 0.8
    noise: float = 0.05

    def validate(self) -> None:
        for name in ("blob_probs", "distractor_probs"):
            probs = np.asarray(getattr(self, name), dtype=float)
            if probs.ndim != 1 or probs.size == 0 or (probs < 0).any() or abs(probs.sum() - 1) > 1e-9:
                raise ConfigurationError(f"{name} must be a probability vector, got {tuple(probs)}")
        if not 0 <= self.two_lung_prob <= 1:
            raise ConfigurationError("two_lung_prob must be in [0, 1]")


def _ellipse(xx, yy, cx, cy, a, b, theta=0.0):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _blob(rng, xx, yy, size, allowed):
    """Small ellipse centred on a random ``allowed`` pixel, or None if there is none."""
    cand = np.flatnonzero(allowed)
    if cand.size == 0:
        return None
    idx = cand[rng.integers(cand.size)]
    cx, cy = divmod(int(idx), allowed.shape[1])
    a, b = rng.uniform(0.04, 0.09, size=2) * size
    return _ellipse(xx, yy, cx, cy, a, b, rng.uniform(0, np.pi))


def synth_sample(rng: np.random.Generator, size: int, cfg: SynthConfig, sid: str) -> tuple[SegmentationSample, int]:
    """One synthetic slice and its infection blob count."""
    xx, yy = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    lung = np.zeros((size, size), dtype=bool)
    two = rng.random() < cfg.two_lung_prob
    centres = [0.3, 0.7] if two else [rng.uniform(0.4, 0.6)]
    for cy in centres:
        a = rng.uniform(0.25, 0.35) * size  # along the first axis
        b = rng.uniform(0.12, 0.17) * size if two else rng.uniform(0.2, 0.3) * size
        cx = rng.uniform(0.45, 0.55) * size
        lung |= _ellipse(xx, yy, cx, cy * size, a, b, rng.uniform(-0.2, 0.2))

    k = int(rng.choice(len(cfg.blob_probs), p=cfg.blob_probs))
    infection = np.zeros_like(lung)
    for _ in range(k):
        blob = _blob(rng, xx, yy, size, lung)
        if blob is not None:
            infection |= blob & lung
    outside = ~lung
    # keep distractors off the lung border so they are never part-lung
    margin = ~_dilate(lung, max(1, size // 16))
    distractors = np.zeros_like(lung)
    for _ in range(int(rng.choice(len(cfg.distractor_probs), p=cfg.distractor_probs))):
        blob = _blob(rng, xx, yy, size, margin)
        if blob is not None:
            distractors |= blob & outside

    image = np.full((size, size), cfg.background)
    image[lung] = cfg.lung_intensity
    image[infection | distractors] = cfg.blob_intensity
    image = np.clip(image + cfg.noise * rng.standard_normal((size, size)), 0.0, 1.0)
    sample = SegmentationSample(
        sid, image[..., None], lung.astype(np.float64)[..., None], infection.astype(np.float64)[..., None], "synth"
    )
    return sample, k


def _dilate(mask: np.ndarray, r: int) -> np.ndarray:
    from scipy.ndimage import binary_dilation

    return binary_dilation(mask, iterations=r)


def synth_dataset(n: int, size: int, seed: int = 0, cfg: SynthConfig | None = None,
                  return_counts: bool = False):
    """``n`` deterministic synthetic samples of ``size x size`` pixels.

    Every sample has one or two mid-intensity lung ellipses over a noisy dark
    background and 0-3 bright infection blobs clipped to the lungs.
    """
    if n < 1 or size < 8:
        raise ConfigurationError(f"need n >= 1 and size >= 8, got n={n}, size={size}")
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    width = len(str(n - 1))
    out, counts = [], []
    for i in range(n):
        s, k = synth_sample(rng, size, cfg, f"synth_{i:0{width}d}")
        out.append(s)
        counts.append(k)
    return (out, counts) if return_counts else out
