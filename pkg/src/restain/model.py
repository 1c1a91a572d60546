"""Small class-conditional epsilon-prediction UNet sized for CPU experiments.

Conditioning is a learned embedding table over stain domains plus one learned
null token; conditioning can also be entirely absent, in which case only the
time embedding drives the network. A thin EpsilonModel wrapper binds a trained
network to a sampling schedule and translates run-schedule timesteps to the
timestep indexing the network was trained with.
"""

import math

import torch
from torch import nn

from .schedule import NoiseSchedule


class _Sentinel:
    def __init__(self, name: str):
        self._name = name

    def __repr__(self) -> str:
        return self._name


ABSENT = _Sentinel("ABSENT")  # no class information added at all
NULL = _Sentinel("NULL")  # the learned null token (embedding index 0)


def condition_key(condition) -> str:
    """Stable string form of a condition, used in cache keys and logs."""
    if condition is ABSENT:
        return "absent"
    if condition is NULL:
        return "null"
    if isinstance(condition, int) and not isinstance(condition, bool):
        return f"domain:{condition}"
    raise ValueError(f"condition must be ABSENT, NULL, or an int domain id (got {condition!r})")


def sinusoidal_time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) timesteps -> (B, dim) sin/cos features with log-spaced frequencies."""
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even (got {dim})")
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, c_out)
        self.norm2 = nn.GroupNorm(8, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        h = h + self.emb(nn.functional.silu(emb))[:, :, None, None]
        h = self.conv2(nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class ConditionalDenoiser(nn.Module):
    """Epsilon-prediction UNet with additive time + class embeddings.

    condition accepted by forward:
      * ABSENT           -- no class embedding
      * NULL             -- the learned null token
      * int domain id    -- applied to the whole batch
      * (B,) LongTensor  -- per-sample embedding indices, 0 = null, i+1 = domain i
    """

    def __init__(self, n_domains: int, base: int = 16, mults=(1, 2, 3), emb_dim: int = 64):
        super().__init__()
        if n_domains < 1:
            raise ValueError(f"n_domains must be >= 1 (got {n_domains})")
        self.n_domains = n_domains
        self.base = base
        self.mults = tuple(mults)
        self.emb_dim = emb_dim

        self.time_mlp = nn.Sequential(nn.Linear(base, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.class_emb = nn.Embedding(n_domains + 1, emb_dim)

        chans = [base * m for m in self.mults]
        self.conv_in = nn.Conv2d(3, chans[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for i, c in enumerate(chans):
            c_prev = chans[max(i - 1, 0)]
            self.down_blocks.append(ResBlock(c_prev, c, emb_dim))
            self.downsamples.append(nn.Conv2d(c, c, 3, stride=2, padding=1) if i < len(chans) - 1 else nn.Identity())

        self.middle = ResBlock(chans[-1], chans[-1], emb_dim)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i in reversed(range(len(chans))):
            c_above = chans[min(i + 1, len(chans) - 1)]
            self.upsamples.append(
                nn.Identity() if i == len(chans) - 1 else nn.Conv2d(c_above, chans[i], 3, padding=1)
            )
            c_in = (c_above if i == len(chans) - 1 else chans[i]) + chans[i]
            self.up_blocks.append(ResBlock(c_in, chans[i], emb_dim))

        self.norm_out = nn.GroupNorm(8, chans[0])
        self.conv_out = nn.Conv2d(chans[0], 3, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def _condition_indices(self, condition, batch: int, device) -> torch.Tensor | None:
        if condition is ABSENT:
            return None
        if condition is NULL:
            return torch.zeros(batch, dtype=torch.long, device=device)
        if isinstance(condition, torch.Tensor):
            if condition.shape != (batch,):
                raise ValueError(f"condition tensor must have shape ({batch},), got {tuple(condition.shape)}")
            if (condition < 0).any() or (condition > self.n_domains).any():
                raise ValueError("condition indices must be in [0, n_domains]")
            return condition.long().to(device)
        if isinstance(condition, int) and not isinstance(condition, bool):
            if not 0 <= condition < self.n_domains:
                raise ValueError(f"domain id must be in [0, {self.n_domains}) (got {condition})")
            return torch.full((batch,), condition + 1, dtype=torch.long, device=device)
        raise ValueError(f"unsupported condition {condition!r}")

    def forward(self, x: torch.Tensor, t, condition=ABSENT) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"x must be (B, 3, H, W), got {tuple(x.shape)}")
        if isinstance(t, int):
            t = torch.full((x.shape[0],), t, dtype=torch.long, device=x.device)
        if t.shape != (x.shape[0],):
            raise ValueError(f"t must be an int or a ({x.shape[0]},) tensor, got {tuple(t.shape)}")

        emb = self.time_mlp(sinusoidal_time_embedding(t, self.base).to(x.dtype))
        idx = self._condition_indices(condition, x.shape[0], x.device)
        if idx is not None:
            emb = emb + self.class_emb(idx)

        h = self.conv_in(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            h = block(h, emb)
            skips.append(h)
            h = down(h)
        h = self.middle(h, emb)
        for up, block in zip(self.upsamples, self.up_blocks):
            if not isinstance(up, nn.Identity):
                h = up(nn.functional.interpolate(h, scale_factor=2, mode="nearest"))
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
        return self.conv_out(nn.functional.silu(self.norm_out(h)))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class EpsilonModel:
    """A trained denoiser bound to a run schedule.

    Calls translate run-schedule timesteps to the trained-model timestep via
    the schedule's model_timesteps map, so the same network serves subsampled
    schedules transparently.
    """

    def __init__(self, net: ConditionalDenoiser, schedule: NoiseSchedule):
        self.net = net
        self.schedule = schedule

    @property
    def n_domains(self) -> int:
        return self.net.n_domains

    def __call__(self, x: torch.Tensor, t: int, condition=ABSENT) -> torch.Tensor:
        if not 0 <= t <= self.schedule.total_steps:
            raise ValueError(f"timestep {t} outside schedule [0, {self.schedule.total_steps}]")
        return self.net(x, self.schedule.model_timestep(t), condition)

    def with_schedule(self, schedule: NoiseSchedule) -> "EpsilonModel":
        return EpsilonModel(self.net, schedule)
