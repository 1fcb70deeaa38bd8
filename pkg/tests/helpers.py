"""Small shared builders for tests that need a network or a dataset."""

from chsnet.data import synth_dataset
from chsnet.network import NetworkConfig, build_model


def tiny_config(**kw) -> NetworkConfig:
    base = dict(stages=2, base_filters=4, input_size=(16, 16, 1), dropout_rate=0.5)
    base.update(kw)
    return NetworkConfig(**base)


def tiny_model(kind: str = "chs", **kw):
    return build_model(tiny_config(**kw), kind)


def tiny_samples(n: int = 6, seed: int = 0):
    return synth_dataset(n, 16, seed)
