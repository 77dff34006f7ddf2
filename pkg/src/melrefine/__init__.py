"""Mel-spectrogram post-filter toolkit.

Treats log-mel spectrograms as images and trains a ResUnet generator
against a bank of multi-scale patch discriminators to restore the fine
detail lost by a Griffin-Lim round trip, with SSIM/STOI evaluation and a
CLI covering data preparation, training, inference, and reporting.
"""

from .dataio import CorpusManifest, PairedExample, build_manifest, materialize_pairs
from .dsp import DspParams, LinearSpectrogram, MelSpectrogram, griffin_lim, make_coarse, wav_to_mel
from .imaging import ImageCodecParams, ScalingMeta, SpectrogramImage, image_to_mel, mel_to_image
from .losses import LossReport, LossWeights
from .model import DiscriminatorBank, DiscriminatorConfig, GeneratorConfig, ResUnetGenerator
from .training import TrainConfig, fit, lr_at, train_step

__version__ = "0.1.0"

__all__ = [
    "CorpusManifest",
    "PairedExample",
    "build_manifest",
    "materialize_pairs",
    "DspParams",
    "LinearSpectrogram",
    "MelSpectrogram",
    "griffin_lim",
    "make_coarse",
    "wav_to_mel",
    "ImageCodecParams",
    "ScalingMeta",
    "SpectrogramImage",
    "image_to_mel",
    "mel_to_image",
    "LossReport",
    "LossWeights",
    "DiscriminatorBank",
    "DiscriminatorConfig",
    "GeneratorConfig",
    "ResUnetGenerator",
    "TrainConfig",
    "fit",
    "lr_at",
    "train_step",
    "__version__",
]
