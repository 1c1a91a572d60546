"""Structural and style loss terms for prompt optimization, plus the
per-timestep inner-iteration budget.

The structural term is a differentiable similarity in [-1, 1]; its loss is
1 - similarity. Two variants are exposed: windowed SSIM over 7x7 windows
("standard-ssim", the default) and a global per-image variance/covariance
ratio ("literal-eq8") that keeps an alternative printed form available for
comparison. Both use small stabilization constants c1, c2 (default 1e-8)
rather than dynamic-range-scaled metric constants.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigurationError

LOSS_VARIANTS = ("standard-ssim", "literal-eq8")


@dataclass(frozen=True)
class LossConfig:
    """lam weights the structural term; 1 - lam weights the style term."""

    lam: float = 0.75
    c1: float = 1e-8
    c2: float = 1e-8
    ist_init: int = 50
    inner_learning_rate: float = 1e-2
    loss_variant: str = "standard-ssim"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lam must be in [0, 1] (got {self.lam})")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigurationError(f"c1 and c2 must be > 0 (got c1={self.c1}, c2={self.c2})")
        if self.ist_init < 1:
            raise ConfigurationError(f"ist_init must be >= 1 (got {self.ist_init})")
        if self.inner_learning_rate <= 0:
            raise ConfigurationError(f"inner_learning_rate must be > 0 (got {self.inner_learning_rate})")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigurationError(f"loss_variant must be one of {LOSS_VARIANTS} (got {self.loss_variant!r})")


def _check_pair(z: torch.Tensor, y: torch.Tensor) -> None:
    if z.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(z.shape)} vs {tuple(y.shape)}")
    if z.ndim != 4:
        raise ValueError(f"inputs must be (N, C, H, W), got {tuple(z.shape)}")


def _windowed_ssim(z: torch.Tensor, y: torch.Tensor, c1: float, c2: float, window: int) -> torch.Tensor:
    k = min(window, z.shape[-2], z.shape[-1])
    mu_z = F.avg_pool2d(z, k, stride=1)
    mu_y = F.avg_pool2d(y, k, stride=1)
    var_z = F.avg_pool2d(z * z, k, stride=1) - mu_z * mu_z
    var_y = F.avg_pool2d(y * y, k, stride=1) - mu_y * mu_y
    cov = F.avg_pool2d(z * y, k, stride=1) - mu_z * mu_y
    lum = (2.0 * mu_z * mu_y + c1) / (mu_z * mu_z + mu_y * mu_y + c1)
    cs = (2.0 * cov + c2) / (var_z + var_y + c2)
    return (lum * cs).mean(dim=(1, 2, 3))


def _global_ratio(z: torch.Tensor, y: torch.Tensor, c1: float, c2: float) -> torch.Tensor:
    zf = z.reshape(z.shape[0], -1)
    yf = y.reshape(y.shape[0], -1)
    dz = zf - zf.mean(dim=1, keepdim=True)
    dy = yf - yf.mean(dim=1, keepdim=True)
    var_z = (dz * dz).mean(dim=1)
    var_y = (dy * dy).mean(dim=1)
    cov = (dz * dy).mean(dim=1)
    sigma_z = torch.sqrt(var_z)
    sigma_y = torch.sqrt(var_y)
    return (2.0 * (sigma_z * sigma_y + c1) * (cov + c2)) / ((var_z + var_y + c1) * (sigma_z * sigma_y + c2))


def struct_similarity(
    z: torch.Tensor, y: torch.Tensor, c1: float = 1e-8, c2: float = 1e-8, variant: str = "standard-ssim", window: int = 7
) -> torch.Tensor:
    """Per-image structural similarity, differentiable, higher = more similar.

    standard-ssim: mean over valid 7x7 windows (clamped to the image size) of
    luminance * contrast-structure. literal-eq8: one global ratio of standard
    deviations and covariance per image, as an alternative printed form; it can
    deviate from 1.0 at identical inputs by O(c1 / variance).
    """
    _check_pair(z, y)
    if variant == "standard-ssim":
        return _windowed_ssim(z, y, c1, c2, window)
    if variant == "literal-eq8":
        return _global_ratio(z, y, c1, c2)
    raise ConfigurationError(f"loss_variant must be one of {LOSS_VARIANTS} (got {variant!r})")


def struct_loss(z: torch.Tensor, y: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """1 - struct_similarity, per image; 0 at identical inputs, <= 2 otherwise."""
    return 1.0 - struct_similarity(z, y, cfg.c1, cfg.c2, cfg.loss_variant)


def style_loss(y_star: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean squared elementwise difference, per image."""
    _check_pair(y_star, y)
    return ((y_star - y) ** 2).mean(dim=(1, 2, 3))


def ist_steps(t: int, total_steps: int, ist_init: int) -> int:
    """Inner gradient updates budgeted for timestep t: a linear ramp from
    ist_init at t=0 down to 0 at t=T, clamped to at least 1 so the first
    optimized prompt still trains."""
    if not 0 <= t <= total_steps:
        raise ValueError(f"t must be in [0, {total_steps}] (got {t})")
    if ist_init < 1:
        raise ValueError(f"ist_init must be >= 1 (got {ist_init})")
    return max(1, (ist_init * (total_steps - t)) // total_steps)
