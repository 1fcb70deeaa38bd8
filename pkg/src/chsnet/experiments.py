"""Desk-scale synthetic training protocol shared by the scripts and acceptance tests.

A protocol fixes the dataset (``synth_dataset(n, size, seed)``), the split and
the optimisation budget; :func:`run_variant` trains one architecture variant
under it and scores the held-out test split.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

from .data import manifest_for, synth_dataset
from .network import NetworkConfig, build_model
from .train import EvalResult, TrainConfig, TrainResult, evaluate, train

# Ablation variants as (model kind, network toggles).  "bu" is the plain U-Net
# baseline: double convs, max pooling and direct skips.
BASELINE = dict(use_rib=False, use_hybrid_pool=False, use_ssd=False)
VARIANTS = {
    "chs": ("chs", {}),
    "direct": ("raiu", {}),
    "bu": ("chs", BASELINE),
    "bu+rib": ("chs", {**BASELINE, "use_rib": True}),
    "bu+ssd": ("chs", {**BASELINE, "use_ssd": True}),
}


@dataclass(frozen=True)
class SynthProtocol:
    n: int = 200
    size: int = 64
    data_seed: int = 0
    split_seed: int = 0
    stages: int = 3
    base_filters: int = 16
    dtype: str = "float32"
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=10, batch_size=8, early_stop_patience=5, check_finite=False)
    )

    def network(self, **toggles) -> NetworkConfig:
        return NetworkConfig(
            stages=self.stages, base_filters=self.base_filters, input_size=(self.size, self.size, 1),
            dtype=self.dtype, **toggles,
        )

    def with_epochs(self, epochs: int) -> "SynthProtocol":
        return replace(self, train=replace(self.train, epochs=epochs))


@dataclass
class VariantResult:
    name: str
    training: TrainResult
    test: EvalResult
    seconds: float

    @property
    def infection_dice(self) -> float:
        return self.test.infection.dice

    @property
    def lung_dice(self) -> float | None:
        return None if self.test.lung is None else self.test.lung.dice


@lru_cache(maxsize=4)
def _splits(n: int, size: int, data_seed: int, split_seed: int):
    samples = synth_dataset(n, size, data_seed)
    manifest = manifest_for(samples, seed=split_seed)
    return tuple(tuple(manifest.select(samples, s)) for s in ("train", "val", "test"))


def protocol_splits(protocol: SynthProtocol):
    """``(train, val, test)`` sample lists of the protocol's dataset."""
    return tuple(list(s) for s in _splits(protocol.n, protocol.size, protocol.data_seed, protocol.split_seed))


def run_variant(name: str, protocol: SynthProtocol | None = None, history_path=None) -> VariantResult:
    """Train the named variant (see ``VARIANTS``) and evaluate it on the test split."""
    protocol = protocol or SynthProtocol()
    kind, toggles = VARIANTS[name]
    tr, va, te = protocol_splits(protocol)
    start = time.perf_counter()
    model = build_model(protocol.network(**toggles), kind)
    result = train(model, tr, va, protocol.train, history_path=history_path)
    test = evaluate(model, te, protocol.train.batch_size, protocol.train.threshold, protocol.train.loss_reduction)
    return VariantResult(name, result, test, time.perf_counter() - start)
