"""Training-free stain transfer by dual-path diffusion inversion.

The package reconstructs image structure via deterministic inversion of a
class-conditional denoiser while steering color/style through per-timestep
additive prompt images optimized against two reference trajectories. A toy
trainer and synthetic multi-stain corpus make the whole pipeline runnable at
desk scale.
"""

__version__ = "0.1.0"

from .adapters import (
    FeatureAdapter,
    HistogramMatchAdapter,
    IdentityAdapter,
    NoisyOracleAdapter,
    OracleRecolorAdapter,
)
from .data import (
    Corpus,
    CorpusManifest,
    StainDomain,
    default_domains,
    generate_content_field,
    generate_synthetic_corpus,
    invert_render,
    load_corpus,
    render_domain,
)
from .errors import (
    AdapterError,
    ConfigurationError,
    CorpusError,
    NumericError,
    OptimizationError,
    RestainError,
    TrainingError,
)
from .losses import LossConfig, ist_steps, struct_loss, struct_similarity, style_loss
from .metrics import frechet_distance, frechet_feature_distance, ms_ssim, psnr, ssim
from .model import ABSENT, NULL, ConditionalDenoiser, EpsilonModel
from .prompts import PromptStack, optimize_prompts
from .schedule import NoiseSchedule, ddim_inverse_step, ddim_reverse_step, ddim_step, make_linear_schedule
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_conditional_denoiser
from .trajectories import Trajectory, build_structural_trajectory, build_style_trajectory, invert_trajectory
from .transfer import TransferConfig, TransferResult, ddim_sample, ist_sweep, lambda_sweep, prompted_sample, transfer

__all__ = [
    "ABSENT",
    "AdapterError",
    "ConditionalDenoiser",
    "ConfigurationError",
    "Corpus",
    "CorpusError",
    "CorpusManifest",
    "EpsilonModel",
    "FeatureAdapter",
    "HistogramMatchAdapter",
    "IdentityAdapter",
    "LossConfig",
    "NULL",
    "NoiseSchedule",
    "NoisyOracleAdapter",
    "NumericError",
    "OptimizationError",
    "OracleRecolorAdapter",
    "PromptStack",
    "RestainError",
    "StainDomain",
    "TrainConfig",
    "TrainingError",
    "Trajectory",
    "TransferConfig",
    "TransferResult",
    "__version__",
    "build_structural_trajectory",
    "build_style_trajectory",
    "ddim_inverse_step",
    "ddim_reverse_step",
    "ddim_sample",
    "ddim_step",
    "default_domains",
    "frechet_distance",
    "frechet_feature_distance",
    "generate_content_field",
    "generate_synthetic_corpus",
    "invert_render",
    "invert_trajectory",
    "ist_steps",
    "ist_sweep",
    "lambda_sweep",
    "load_checkpoint",
    "load_corpus",
    "make_linear_schedule",
    "ms_ssim",
    "optimize_prompts",
    "prompted_sample",
    "psnr",
    "render_domain",
    "save_checkpoint",
    "ssim",
    "struct_loss",
    "struct_similarity",
    "style_loss",
    "train_conditional_denoiser",
    "transfer",
]
