"""Per-timestep null visual prompt optimization against the dual-path
trajectories (Stage 2).

Starting from the structural pivot x*_T, each timestep t = T..1 gets a
zero-initialized prompt image phi_t, trained by a few Adam steps to make one
denoising step from (y_t + phi_t) under the target label land close to the
structural target x*_{t-1} (weight lam) and the style target y*_{t-1}
(weight 1 - lam). The model weights are never touched; the prompts are the
only optimized variables.
"""

import time
from dataclasses import dataclass
from pathlib import Path

import torch

from .errors import ConfigurationError, OptimizationError
from .losses import LossConfig, ist_steps, struct_loss, style_loss
from .model import EpsilonModel, condition_key
from .schedule import ddim_reverse_step
from .trajectories import Trajectory
from .utils import atomic_torch_save, fingerprint_array, fingerprint_json, fingerprint_state_dict


@dataclass(frozen=True)
class PromptStack:
    """prompts[i] is phi_{T-i}: index 0 holds the prompt for the first
    (noisiest) denoising step. Zero-initialized before optimization."""

    prompts: torch.Tensor  # (T, N, 3, H, W)

    def __post_init__(self):
        if self.prompts.ndim != 5:
            raise ValueError(f"prompts must be (T, N, 3, H, W), got {tuple(self.prompts.shape)}")

    @property
    def total_steps(self) -> int:
        return self.prompts.shape[0]

    def prompt_for(self, t: int) -> torch.Tensor:
        """The prompt applied at denoising step t -> t-1, for t in [1, T]."""
        if not 1 <= t <= self.total_steps:
            raise ValueError(f"t must be in [1, {self.total_steps}] (got {t})")
        return self.prompts[self.total_steps - t]

    @staticmethod
    def zeros(total_steps: int, latent_shape, dtype=torch.float32) -> "PromptStack":
        return PromptStack(torch.zeros((total_steps, *latent_shape), dtype=dtype))

    def fingerprint(self) -> str:
        return fingerprint_array(self.prompts)


def _validate_pair(x_traj: Trajectory, y_traj: Trajectory | None, model: EpsilonModel, lam: float) -> str:
    model_fp = fingerprint_state_dict(model.net.state_dict())
    if x_traj.model_fp != model_fp:
        raise ConfigurationError("structural trajectory was built against a different checkpoint")
    if x_traj.schedule_fp != model.schedule.fingerprint():
        raise ConfigurationError("structural trajectory was built against a different schedule")
    if x_traj.total_steps != model.schedule.total_steps:
        raise ConfigurationError(
            f"trajectory has {x_traj.total_steps} steps, schedule has {model.schedule.total_steps}"
        )
    if y_traj is None:
        if lam < 1.0:
            raise ConfigurationError("style trajectory required when lam < 1")
        return model_fp
    if (
        y_traj.total_steps != x_traj.total_steps
        or y_traj.latents.shape != x_traj.latents.shape
        or y_traj.model_fp != x_traj.model_fp
        or y_traj.schedule_fp != x_traj.schedule_fp
    ):
        raise ConfigurationError("structural and style trajectories disagree on steps, shape, or provenance")
    return model_fp


def optimize_prompts(
    x_traj: Trajectory,
    y_traj: Trajectory | None,
    model: EpsilonModel,
    target_condition,
    cfg: LossConfig,
    progress: bool = False,
):
    """Returns (PromptStack, trace, loss_log).

    target_condition is usually an int domain label, but the null/absent
    sentinels are accepted for unconditional-sampling studies. trace is the
    (T+1, N, 3, H, W) tensor of intermediate latents after each prompted step
    (trace[T] is the pivot, trace[0] the final image estimate); loss_log is a
    flat list of (t, inner_step, struct, style, total) rows with NaN for
    whichever term lam switches off.
    """
    condition_key(target_condition)  # rejects anything that is not a condition
    _validate_pair(x_traj, y_traj, model, cfg.lam)

    sched = model.schedule
    total = sched.total_steps
    lam = float(cfg.lam)
    y_bar = x_traj.state(total).clone()  # pivot
    prompts = torch.zeros((total, *y_bar.shape), dtype=y_bar.dtype)
    trace = torch.zeros((total + 1, *y_bar.shape), dtype=y_bar.dtype)
    trace[total] = y_bar
    loss_log = []
    nan = float("nan")
    t_start = time.monotonic()

    for t in range(total, 0, -1):
        x_target = x_traj.state(t - 1) if lam > 0.0 else None
        y_target = y_traj.state(t - 1) if lam < 1.0 else None
        phi = torch.zeros_like(y_bar, requires_grad=True)
        opt = torch.optim.Adam([phi], lr=cfg.inner_learning_rate)

        for k in range(ist_steps(t, total, cfg.ist_init)):
            y_in = y_bar + phi
            y_prev = ddim_reverse_step(y_in, model(y_in, t, target_condition), t, sched)
            struct_val, style_val = nan, nan
            loss = y_prev.new_zeros(())
            if lam > 0.0:
                s = struct_loss(x_target, y_prev, cfg).mean()
                struct_val = float(s.detach())
                loss = loss + lam * s
            if lam < 1.0:
                s = style_loss(y_target, y_prev).mean()
                style_val = float(s.detach())
                loss = loss + (1.0 - lam) * s
            if not torch.isfinite(loss):
                raise OptimizationError(f"non-finite loss at timestep {t}, inner step {k}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_log.append((t, k, struct_val, style_val, float(loss.detach())))

        with torch.no_grad():
            phi_final = phi.detach()
            if not torch.isfinite(phi_final).all():
                raise OptimizationError(f"non-finite prompt after timestep {t}")
            y_in = y_bar + phi_final
            y_bar = ddim_reverse_step(y_in, model(y_in, t, target_condition), t, sched)
        prompts[total - t] = phi_final
        trace[t - 1] = y_bar
        if progress and (t % max(1, total // 10) == 0 or t == 1):
            rate = (total - t + 1) / (time.monotonic() - t_start)
            print(f"prompt timestep {t:4d}/{total}  loss {loss_log[-1][4]:.5f}  ({rate:.2f} t/s)", flush=True)

    return PromptStack(prompts), trace, loss_log


def prompt_cache_key(struct_key: str, style_key: str | None, target_condition, cfg: LossConfig) -> str:
    """Prompt entries extend the trajectory keys with the target label and the
    full loss configuration (anything that changes the optimization output)."""
    return fingerprint_json(
        {
            "struct": struct_key,
            "style": style_key,
            "target": condition_key(target_condition),
            "lam": cfg.lam,
            "c1": cfg.c1,
            "c2": cfg.c2,
            "ist_init": cfg.ist_init,
            "lr": cfg.inner_learning_rate,
            "variant": cfg.loss_variant,
        }
    )


class PromptCache:
    """Disk cache for optimized prompt stacks, same container style as the
    trajectory cache (atomic write-then-rename)."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"prompts_{key}.pt"

    def load(self, key: str) -> PromptStack | None:
        path = self._path(key)
        if not path.exists():
            return None
        payload = torch.load(path, map_location="cpu", weights_only=False)
        return PromptStack(payload["prompts"])

    def store(self, key: str, stack: PromptStack, meta: dict | None = None) -> Path:
        payload = {"prompts": stack.prompts, "meta": dict(meta or {})}
        path = self._path(key)
        atomic_torch_save(payload, path)
        return path
