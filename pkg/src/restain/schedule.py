"""Noise schedule and the two deterministic DDIM step primitives.

Timesteps are indexed 0..T inclusive; ``alpha_bar[0] == 1.0`` exactly so that
t=0 latents are plain images. Both steps share one affine update

    x' = sqrt(abar_to) * (x - sqrt(1 - abar_from) * eps) / sqrt(abar_from)
         + sqrt(1 - abar_to) * eps

used in the denoising direction (to = t-1) and the noising direction
(to = t+1). Step math runs in the dtype of the input tensor, so passing
float64 tensors gives a double-precision reference path.
"""

from dataclasses import dataclass, field

import torch

from .errors import ConfigurationError, NumericError
from .utils import fingerprint_array


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal coefficients abar_0..abar_T plus the trained-model
    timestep index each position corresponds to (identity unless subsampled)."""

    alpha_bar: torch.Tensor  # float64, shape (T+1,)
    model_timesteps: tuple = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        ab = torch.as_tensor(self.alpha_bar, dtype=torch.float64)
        object.__setattr__(self, "alpha_bar", ab)
        if ab.ndim != 1 or ab.numel() < 2:
            raise ConfigurationError("alpha_bar must be a 1-D sequence of length T+1 with T >= 1")
        if not torch.isfinite(ab).all():
            raise ConfigurationError("alpha_bar contains non-finite values")
        if not (1.0 - 1e-6 < float(ab[0]) <= 1.0):
            raise ConfigurationError(f"alpha_bar[0] must be 1 (got {float(ab[0])})")
        if (ab <= 0).any() or (ab > 1).any():
            raise ConfigurationError("alpha_bar values must lie in (0, 1]")
        if (ab[1:] >= ab[:-1]).any():
            raise ConfigurationError("alpha_bar must be strictly decreasing")
        if self.model_timesteps is None:
            object.__setattr__(self, "model_timesteps", tuple(range(ab.numel())))
        elif len(self.model_timesteps) != ab.numel():
            raise ConfigurationError("model_timesteps length must equal len(alpha_bar)")

    @property
    def total_steps(self) -> int:
        return self.alpha_bar.numel() - 1

    def model_timestep(self, t: int) -> int:
        """Trained-model timestep index to feed the noise predictor at position t."""
        return int(self.model_timesteps[t])

    def subsample(self, total_steps: int) -> "NoiseSchedule":
        """Uniformly subsample to ``total_steps`` DDIM steps over the trained schedule."""
        if total_steps == self.total_steps:
            return self
        if not 1 <= total_steps <= self.total_steps:
            raise ConfigurationError(
                f"cannot subsample schedule of {self.total_steps} steps to {total_steps}"
            )
        idx = torch.linspace(0, self.total_steps, total_steps + 1).round().long()
        if (idx[1:] <= idx[:-1]).any():
            raise ConfigurationError("subsampling produced duplicate timesteps")
        return NoiseSchedule(
            alpha_bar=self.alpha_bar[idx],
            model_timesteps=tuple(self.model_timestep(int(i)) for i in idx),
        )

    def fingerprint(self) -> str:
        return fingerprint_array(self.alpha_bar)


def make_linear_schedule(total_steps: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear-beta schedule: abar_t = prod_{s<=t} (1 - beta_s) with beta linearly spaced."""
    if total_steps < 1:
        raise ConfigurationError(f"total_steps must be >= 1 (got {total_steps})")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_min <= beta_max < 1 (got beta_min={beta_min}, beta_max={beta_max})"
        )
    if total_steps == 1:
        betas = torch.tensor([beta_min], dtype=torch.float64)
    else:
        betas = torch.linspace(beta_min, beta_max, total_steps, dtype=torch.float64)
    alpha_bar = torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(1.0 - betas, dim=0)])
    return NoiseSchedule(alpha_bar=alpha_bar)


def _check_step_inputs(x: torch.Tensor, eps: torch.Tensor) -> None:
    if eps.shape != x.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} does not match state shape {tuple(x.shape)}")
    if not torch.isfinite(eps).all() or not torch.isfinite(x).all():
        raise NumericError("non-finite values in DDIM step inputs")


def ddim_step(x: torch.Tensor, eps: torch.Tensor, alpha_bar_from: float, alpha_bar_to: float) -> torch.Tensor:
    """Shared affine DDIM update between two signal levels.

    Equal coefficients short-circuit to the identity: the update cancels
    algebraically in that case and the short-circuit keeps it exact in floats.
    """
    if alpha_bar_from == alpha_bar_to:
        return x.clone() if not x.requires_grad else x + torch.zeros((), dtype=x.dtype, device=x.device)
    a_from = torch.as_tensor(alpha_bar_from, dtype=x.dtype, device=x.device)
    a_to = torch.as_tensor(alpha_bar_to, dtype=x.dtype, device=x.device)
    x0_pred = (x - torch.sqrt(1.0 - a_from) * eps) / torch.sqrt(a_from)
    return torch.sqrt(a_to) * x0_pred + torch.sqrt(1.0 - a_to) * eps


def ddim_reverse_step(x_t: torch.Tensor, eps: torch.Tensor, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    """One deterministic denoising step t -> t-1 (sigma = 0)."""
    if not 1 <= t <= schedule.total_steps:
        raise ValueError(f"reverse step needs 1 <= t <= {schedule.total_steps} (got t={t})")
    _check_step_inputs(x_t, eps)
    return ddim_step(x_t, eps, float(schedule.alpha_bar[t]), float(schedule.alpha_bar[t - 1]))


def ddim_inverse_step(x_t: torch.Tensor, eps: torch.Tensor, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    """One deterministic noising step t -> t+1 (DDIM sampling run in reverse)."""
    if not 0 <= t <= schedule.total_steps - 1:
        raise ValueError(f"inverse step needs 0 <= t <= {schedule.total_steps - 1} (got t={t})")
    _check_step_inputs(x_t, eps)
    return ddim_step(x_t, eps, float(schedule.alpha_bar[t]), float(schedule.alpha_bar[t + 1]))
