"""CHS-Net: cascaded lung-contour and infection segmentation on a NumPy autodiff core.

The package is layered: ``tensor``/``functional`` (differentiable primitives),
``spectral`` (DFT-based pooling), ``nn``/``blocks``/``attention`` (layers),
``network`` (RAIU-Net and the CHS-Net cascade), ``losses``/``metrics``/
``train``/``uncertainty`` (optimisation and evaluation) and ``data``/
``config``/``cli`` (I/O and the command line).
"""

from .attention import SpectralDepthAttention, SpectralSpatialAttention, SSDSkip
from .blocks import InceptionConv, ResidualInceptionBlock, dsc_cost_ratio
from .data import SegmentationSample, load_dataset, synth_dataset
from .experiments import SynthProtocol, run_variant
from .losses import bce_loss, dice_loss, segmentation_loss
from .metrics import MetricsReport, compute_metrics
from .network import CHSNet, NetworkConfig, RAIUNet, build_chs_net, build_raiu_net, parameter_census
from .spectral import dft2, global_spectral_max_pool, hybrid_pool, idft2, spectral_pool
from .tensor import Tape, Tensor, grad_check
from .train import TrainConfig, evaluate, train
from .uncertainty import UncertaintyMap, mc_dropout_uncertainty

__version__ = "0.1.0"

__all__ = [
    "CHSNet", "InceptionConv", "MetricsReport", "NetworkConfig", "RAIUNet", "ResidualInceptionBlock",
    "SSDSkip", "SegmentationSample", "SynthProtocol", "SpectralDepthAttention", "SpectralSpatialAttention", "Tape",
    "Tensor", "TrainConfig", "UncertaintyMap", "bce_loss", "build_chs_net", "build_raiu_net",
    "compute_metrics", "dft2", "dice_loss", "dsc_cost_ratio", "evaluate", "global_spectral_max_pool",
    "grad_check", "hybrid_pool", "idft2", "load_dataset", "mc_dropout_uncertainty", "parameter_census", "run_variant",
    "segmentation_loss", "spectral_pool", "synth_dataset", "train",
]
