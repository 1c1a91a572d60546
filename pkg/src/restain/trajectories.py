"""Dual-path deterministic inversion: the structural trajectory (input image
inverted under its source label) and the style trajectory (adapter output
inverted under the null condition), plus a disk cache for both.

A Trajectory stores every latent from t=0 to t=T for a batch of images along
with the condition and the model/schedule fingerprints it was built against,
so downstream stages can verify provenance and re-check the inversion.
"""

import time
from dataclasses import dataclass
from pathlib import Path

import torch

from .adapters import FeatureAdapter
from .errors import ConfigurationError, NumericError
from .model import ABSENT, NULL, EpsilonModel, condition_key
from .schedule import ddim_inverse_step
from .utils import (
    atomic_torch_save,
    fingerprint_array,
    fingerprint_json,
    fingerprint_state_dict,
    hwc_to_tensor,
)

_CONDITIONS = {"absent": ABSENT, "null": NULL}


def condition_from_key(key: str):
    """Inverse of model.condition_key."""
    if key in _CONDITIONS:
        return _CONDITIONS[key]
    if key.startswith("domain:"):
        return int(key.split(":", 1)[1])
    raise ValueError(f"unrecognized condition key {key!r}")


@dataclass(frozen=True)
class Trajectory:
    """latents[t] is the batch latent at timestep t, shape (T+1, N, 3, H, W)."""

    latents: torch.Tensor
    condition_key: str
    kind: str  # "structural" | "style"
    model_fp: str
    schedule_fp: str

    def __post_init__(self):
        if self.latents.ndim != 5:
            raise ValueError(f"latents must be (T+1, N, 3, H, W), got {tuple(self.latents.shape)}")
        if self.kind not in ("structural", "style"):
            raise ValueError(f"kind must be 'structural' or 'style', got {self.kind!r}")

    @property
    def total_steps(self) -> int:
        return self.latents.shape[0] - 1

    @property
    def condition(self):
        return condition_from_key(self.condition_key)

    def state(self, t: int) -> torch.Tensor:
        if not 0 <= t <= self.total_steps:
            raise ValueError(f"timestep {t} outside [0, {self.total_steps}]")
        return self.latents[t]

    def fingerprint(self) -> str:
        return fingerprint_json(
            {
                "latents": fingerprint_array(self.latents),
                "condition": self.condition_key,
                "kind": self.kind,
                "model": self.model_fp,
                "schedule": self.schedule_fp,
            }
        )


def _as_batch(x0) -> torch.Tensor:
    if isinstance(x0, torch.Tensor):
        t = x0.float()
        if t.ndim == 3:
            t = t[None]
    else:
        t = hwc_to_tensor(x0)
    if t.ndim != 4 or t.shape[1] != 3:
        raise ValueError(f"x0 must be (N, 3, H, W) or H x W x 3 (got {tuple(t.shape)})")
    return t


def invert_trajectory(model: EpsilonModel, x0, condition, kind: str, model_fp: str | None = None) -> Trajectory:
    """Run the deterministic inversion from t=0 to t=T under one condition."""
    x = _as_batch(x0)
    sched = model.schedule
    states = [x]
    with torch.no_grad():
        for t in range(sched.total_steps):
            eps = model(x, t, condition)
            if not torch.isfinite(eps).all():
                raise NumericError(f"non-finite noise prediction at timestep {t}")
            x = ddim_inverse_step(x, eps, t, sched)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite latent at timestep {t + 1}")
            states.append(x)
    if model_fp is None:
        model_fp = fingerprint_state_dict(model.net.state_dict())
    return Trajectory(
        latents=torch.stack(states),
        condition_key=condition_key(condition),
        kind=kind,
        model_fp=model_fp,
        schedule_fp=sched.fingerprint(),
    )


def build_structural_trajectory(model: EpsilonModel, x0, source_label: int, model_fp=None) -> Trajectory:
    """Invert the input image under its source-domain label (content template)."""
    if not isinstance(source_label, int) or isinstance(source_label, bool):
        raise ConfigurationError(f"source label must be an int domain id (got {source_label!r})")
    return invert_trajectory(model, x0, source_label, "structural", model_fp)


def build_style_trajectory(
    model: EpsilonModel, x0, adapter: FeatureAdapter, sample_id=None, null_condition=NULL, model_fp=None
) -> Trajectory:
    """Apply the adapter once at t=0, then invert its output under the null
    condition (style template). null_condition may be NULL (learned token) or
    ABSENT (no class embedding at all)."""
    if null_condition is not NULL and null_condition is not ABSENT:
        raise ConfigurationError("style trajectory condition must be NULL or ABSENT")
    x = _as_batch(x0)
    adapted = []
    for i in range(x.shape[0]):
        hwc = x[i].double().numpy().transpose(1, 2, 0)
        sid = sample_id[i] if isinstance(sample_id, (list, tuple)) else sample_id
        adapted.append(hwc_to_tensor(adapter(hwc, sid))[0])
    return invert_trajectory(model, torch.stack(adapted), null_condition, "style", model_fp)


def verify_trajectory(traj: Trajectory, model: EpsilonModel) -> bool:
    """Re-run the inversion from latents[0]; True iff every stored latent is
    reproduced bit-identically (same weights, same precision)."""
    redone = invert_trajectory(model, traj.state(0), traj.condition, traj.kind, traj.model_fp)
    return torch.equal(redone.latents, traj.latents)


def trajectory_cache_key(model_fp: str, schedule_fp: str, x0, condition) -> str:
    """Cache key: (checkpoint, schedule, image contents, condition)."""
    return fingerprint_json(
        {
            "model": model_fp,
            "schedule": schedule_fp,
            "image": fingerprint_array(_as_batch(x0)),
            "condition": condition_key(condition),
        }
    )


class TrajectoryCache:
    """Disk cache of trajectories; writes are atomic (write-then-rename), so
    concurrent builders for the same key cannot corrupt an entry."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"traj_{key}.pt"

    def load(self, key: str) -> Trajectory | None:
        path = self._path(key)
        if not path.exists():
            return None
        payload = torch.load(path, map_location="cpu", weights_only=False)
        return Trajectory(
            latents=payload["latents"],
            condition_key=payload["condition"],
            kind=payload["kind"],
            model_fp=payload["model_fp"],
            schedule_fp=payload["schedule_fp"],
        )

    def store(self, key: str, traj: Trajectory) -> Path:
        payload = {
            "latents": traj.latents,
            "condition": traj.condition_key,
            "kind": traj.kind,
            "model_fp": traj.model_fp,
            "schedule_fp": traj.schedule_fp,
        }
        path = self._path(key)
        atomic_torch_save(payload, path)
        return path


def cached_structural_trajectory(model, x0, source_label: int, cache: TrajectoryCache | None, model_fp: str):
    """Build (or load) the structural trajectory; returns (trajectory, key, seconds, hit)."""
    key = trajectory_cache_key(model_fp, model.schedule.fingerprint(), x0, source_label)
    t0 = time.monotonic()
    if cache is not None:
        hit = cache.load(key)
        if hit is not None:
            return hit, key, time.monotonic() - t0, True
    traj = build_structural_trajectory(model, x0, source_label, model_fp)
    if cache is not None:
        cache.store(key, traj)
    return traj, key, time.monotonic() - t0, False


def cached_style_trajectory(
    model, x0, adapter, sample_id, null_condition, cache: TrajectoryCache | None, model_fp: str
):
    """Build (or load) the style trajectory. The cache key uses the adapter's
    output image, so any adapter producing identical references shares entries."""
    x = _as_batch(x0)
    adapted = []
    for i in range(x.shape[0]):
        hwc = x[i].double().numpy().transpose(1, 2, 0)
        sid = sample_id[i] if isinstance(sample_id, (list, tuple)) else sample_id
        adapted.append(hwc_to_tensor(adapter(hwc, sid))[0])
    y0 = torch.stack(adapted)
    key = trajectory_cache_key(model_fp, model.schedule.fingerprint(), y0, null_condition)
    t0 = time.monotonic()
    if cache is not None:
        hit = cache.load(key)
        if hit is not None:
            return hit, key, time.monotonic() - t0, True
    traj = invert_trajectory(model, y0, null_condition, "style", model_fp)
    if cache is not None:
        cache.store(key, traj)
    return traj, key, time.monotonic() - t0, False
