"""Training loop for the class-conditional denoiser on a stain corpus.

Epsilon-prediction objective: corrupt clean images to a uniformly sampled
noise level and regress the injected noise, with the domain label randomly
replaced by the null token at a fixed rate so the null token stays meaningful.
Runs are bitwise reproducible for a fixed seed on a fixed corpus.
"""

import dataclasses
import time
from dataclasses import dataclass

import numpy as np
import torch

from .data import Corpus
from .errors import ConfigurationError, TrainingError
from .model import ConditionalDenoiser, EpsilonModel, count_parameters
from .schedule import NoiseSchedule, make_linear_schedule
from .utils import atomic_torch_save, derive_seed, fingerprint_state_dict, hwc_to_tensor


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.02
    iterations: int = 8000
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-4
    null_prob: float = 0.1
    base: int = 16
    mults: tuple = (1, 2, 3)
    emb_dim: int = 64
    flip_augment: bool = True
    seed: int = 0
    log_every: int = 500


def _stack_training_images(corpus: Corpus) -> tuple:
    ids = corpus.sample_ids(split="train")
    if not ids:
        raise TrainingError("corpus has no training-split samples")
    images, labels = [], []
    for sid in ids:
        for d in corpus.domains:
            images.append(hwc_to_tensor(corpus.image(sid, d.id))[0])
            labels.append(d.id)
    return torch.stack(images), torch.tensor(labels, dtype=torch.long)


def train_conditional_denoiser(
    corpus: Corpus, config: TrainConfig = TrainConfig(), progress: bool = False, resume_from=None
):
    """Train a denoiser on the corpus train split.

    Returns (EpsilonModel, history, aux): history is a list of (iteration,
    mean loss since last log) pairs; aux carries the optimizer state, batch
    RNG state, and final iteration count needed to resume. Resuming from a
    checkpoint continues the iteration counter, optimizer moments, and RNG
    stream, so a split run matches a straight run bit for bit.
    """
    images, labels = _stack_training_images(corpus)
    n_domains = len(corpus.domains)
    schedule = make_linear_schedule(config.total_steps, config.beta_min, config.beta_max)
    alpha_bar = schedule.alpha_bar.float()

    torch.manual_seed(derive_seed(config.seed, "model-init"))
    net = ConditionalDenoiser(n_domains, base=config.base, mults=config.mults, emb_dim=config.emb_dim)
    opt = torch.optim.AdamW(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    g = torch.Generator().manual_seed(derive_seed(config.seed, "train-batches"))

    start_iter, history = 0, []
    if resume_from is not None:
        payload = torch.load(resume_from, map_location="cpu", weights_only=False)
        saved = dict(payload["config"])
        saved["mults"] = tuple(saved["mults"])
        saved_cfg = dataclasses.replace(TrainConfig(**saved), iterations=config.iterations)
        if saved_cfg != config:
            raise ConfigurationError("resume checkpoint was trained with a different configuration")
        if payload.get("n_domains") != n_domains:
            raise ConfigurationError(
                f"resume checkpoint has {payload.get('n_domains')} domains, corpus has {n_domains}"
            )
        net.load_state_dict(payload["state_dict"])
        if payload.get("optimizer") is not None:
            opt.load_state_dict(payload["optimizer"])
        if payload.get("rng_state") is not None:
            g.set_state(payload["rng_state"])
        start_iter = int(payload.get("iteration", 0))
        history = [tuple(h) for h in payload.get("history", [])]

    n, t_max = images.shape[0], config.total_steps
    running, t_start = [], time.monotonic()
    net.train()
    for it in range(start_iter + 1, config.iterations + 1):
        idx = torch.randint(n, (config.batch_size,), generator=g)
        x0 = images[idx].clone()
        if config.flip_augment:
            flips = torch.rand(2, config.batch_size, generator=g)
            for b in range(config.batch_size):
                if flips[0, b] < 0.5:
                    x0[b] = torch.flip(x0[b], dims=[2])
                if flips[1, b] < 0.5:
                    x0[b] = torch.flip(x0[b], dims=[1])

        vocab = labels[idx] + 1
        drop = torch.rand(config.batch_size, generator=g) < config.null_prob
        vocab = torch.where(drop, torch.zeros_like(vocab), vocab)

        t = torch.randint(1, t_max + 1, (config.batch_size,), generator=g)
        eps = torch.randn(x0.shape, generator=g)
        ab = alpha_bar[t][:, None, None, None]
        x_t = ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps

        pred = net(x_t, t, vocab)
        loss = torch.mean((pred - eps) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()

        running.append(loss.item())
        if it % config.log_every == 0 or it == config.iterations:
            mean_loss = float(np.mean(running))
            history.append((it, mean_loss))
            running = []
            if progress:
                rate = it / (time.monotonic() - t_start)
                print(f"iter {it:6d}/{config.iterations}  loss {mean_loss:.4f}  ({rate:.1f} it/s)", flush=True)

    if history and not np.isfinite(history[-1][1]):
        raise TrainingError(f"training diverged: final loss {history[-1][1]}")
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    aux = {
        "iteration": max(start_iter, config.iterations),
        "optimizer": opt.state_dict(),
        "rng_state": g.get_state(),
    }
    return EpsilonModel(net, schedule), history, aux


def save_checkpoint(path, model: EpsilonModel, config: TrainConfig, history=None, aux: dict | None = None) -> None:
    aux = aux or {}
    payload = {
        "state_dict": model.net.state_dict(),
        "n_domains": model.net.n_domains,
        "config": dataclasses.asdict(config),
        "history": list(history or []),
        "iteration": aux.get("iteration", config.iterations),
        "optimizer": aux.get("optimizer"),
        "rng_state": aux.get("rng_state"),
    }
    atomic_torch_save(payload, path)


def load_checkpoint(path) -> tuple:
    """Returns (EpsilonModel, TrainConfig, history). The model comes back
    frozen and in eval mode, bound to its training schedule."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    raw = dict(payload["config"])
    raw["mults"] = tuple(raw["mults"])
    config = TrainConfig(**raw)
    net = ConditionalDenoiser(payload["n_domains"], base=config.base, mults=config.mults, emb_dim=config.emb_dim)
    net.load_state_dict(payload["state_dict"])
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    schedule = make_linear_schedule(config.total_steps, config.beta_min, config.beta_max)
    return EpsilonModel(net, schedule), config, payload.get("history", [])


def model_fingerprint(model: EpsilonModel) -> str:
    """Hash of all network weights; unchanged weights hash identically."""
    return fingerprint_state_dict(model.net.state_dict())


__all__ = [
    "TrainConfig",
    "train_conditional_denoiser",
    "save_checkpoint",
    "load_checkpoint",
    "model_fingerprint",
    "count_parameters",
]
