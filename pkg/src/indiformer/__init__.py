"""indiformer: time-domain two-source audio separation with a
feature-decoupling dual-path network, trainable and verifiable at desk
scale."""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigurationError,
    DimensionError,
    IndiformerError,
    InvalidInputError,
    NumericError,
    UnsupportedChannelCountError,
    UnsupportedCodecError,
)
from .signal_io import MixturePair, Waveform, load_wav, mix, save_wav, synth_source
from .separator import EncoderConfig, SeparatorConfig, SeparatorModel
from .metrics import MetricConfig, report, seg_snr, sisnr, sisnri, snr
from .training import TrainConfig, TrainHistory, lr_schedule, pit_loss, train

__all__ = [
    "CheckpointError", "ConfigurationError", "DimensionError",
    "IndiformerError", "InvalidInputError", "NumericError",
    "UnsupportedChannelCountError", "UnsupportedCodecError",
    "MixturePair", "Waveform", "load_wav", "mix", "save_wav", "synth_source",
    "EncoderConfig", "SeparatorConfig", "SeparatorModel",
    "MetricConfig", "report", "seg_snr", "sisnr", "sisnri", "snr",
    "TrainConfig", "TrainHistory", "lr_schedule", "pit_loss", "train",
    "__version__",
]
