"""Self-supervised slice-order pretraining for volumetric images.

Submodules: ``volio`` (loading and intensity preprocessing), ``sampler``,
``augment``, ``losses``, ``metrics``, ``models``, ``trainer``, ``localize``,
``phantom`` and ``cli``.
"""
from ._kernels import BACKEND
from .augment import AugmentationPolicy, builtin_policy
from .localize import LocalizationConfig, localize
from .losses import ContrastiveConfig, RankingLossConfig, margin_ranking_loss, nt_xent_loss
from .metrics import iou, mean_displacement, random_md_baseline
from .models import EncoderSpec, build_model
from .phantom import PhantomSpec, generate, generate_dataset
from .sampler import SamplingSpec, sample_batch
from .trainer import FinetuneConfig, PretrainConfig, compare_runs, finetune, pretrain
from .volio import PreprocessSpec, Volume, load_volume, preprocess

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AugmentationPolicy", "builtin_policy", "LocalizationConfig", "localize", "ContrastiveConfig",
    "RankingLossConfig", "margin_ranking_loss", "nt_xent_loss", "iou", "mean_displacement", "random_md_baseline",
    "EncoderSpec", "build_model", "PhantomSpec", "generate", "generate_dataset", "SamplingSpec", "sample_batch",
    "FinetuneConfig", "PretrainConfig", "compare_runs", "finetune", "pretrain", "PreprocessSpec", "Volume",
    "load_volume", "preprocess",
]
