"""Flat ``key = value`` run configuration.

Keys carry a section prefix: ``net.`` for :class:`NetworkConfig` fields,
``train.`` for :class:`TrainConfig` fields and ``run.`` for the few run-level
options (``run.model`` is ``chs`` or ``raiu``).  Blank lines and ``#`` comments
are ignored.  Tuples are written comma-separated, ``none`` clears an optional.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError
from .network import MODEL_KINDS, NetworkConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    net: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: str = "chs"
    split_seed: int = 0
    balance: bool = False

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigurationError(f"run.model must be one of {sorted(MODEL_KINDS)}, got {self.model!r}")


_RUN_FIELDS = {"model": str, "split_seed": int, "balance": bool}


def _convert(raw: str, typ, key: str):
    text = raw.strip()
    origin = typing.get_origin(typ)
    args = typing.get_args(typ)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if text.lower() == "none":
            return None
        typ = next(a for a in args if a is not type(None))
        origin = typing.get_origin(typ)
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if origin is tuple:
            inner = typing.get_args(typ)[0]
            return tuple(inner(v) for v in text.split(","))
        return text
    except ValueError:
        raise ConfigurationError(f"{key}: cannot read {text!r} as {getattr(typ, '__name__', typ)}") from None


def _types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    sections = {"net": ({}, _types(NetworkConfig)), "train": ({}, _types(TrainConfig)), "run": ({}, _RUN_FIELDS)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        prefix, _, name = key.partition(".")
        if prefix not in sections or not name:
            raise ConfigurationError(f"{source}:{lineno}: key {key!r} needs a net., train. or run. prefix")
        values, types = sections[prefix]
        if name not in types:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}; valid: {', '.join(sorted(types))}")
        values[name] = _convert(value, types[name], key)
    net = NetworkConfig(**sections["net"][0])
    tr = TrainConfig(**sections["train"][0])
    return RunConfig(net, tr, **sections["run"][0])


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg: RunConfig) -> str:
    """Every resolved value, one ``key = value`` per line (round-trips through :func:`parse_config`)."""
    lines = []
    for prefix, obj in (("net", cfg.net), ("train", cfg.train)):
        for f in fields(obj):
            lines.append(f"{prefix}.{f.name} = {_fmt(getattr(obj, f.name))}")
    for name in _RUN_FIELDS:
        lines.append(f"run.{name} = {_fmt(getattr(cfg, name))}")
    return "\n".join(lines) + "\n"
