"""Structural and style quality metrics: SSIM, MS-SSIM, PSNR, and a Fréchet
feature distance over a small stain-domain classifier's embeddings.

Metric SSIM uses the conventional dynamic-range-scaled constants (k1=0.01,
k2=0.03) and uniform 7x7 windows with sample (unbiased) covariance; this is
intentionally different from the loss-side similarity, whose tiny fixed
constants exist for optimization stability, not comparability.
"""

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view
from torch import nn

from .data import Corpus
from .errors import TrainingError
from .utils import atomic_torch_save, derive_seed, fingerprint_state_dict, hwc_to_tensor, to_uint8

#: Conventional five-scale MS-SSIM weights.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _channels(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ValueError(f"image must be H x W or H x W x C (got shape {a.shape})")
    return a


def _ssim_components(a: np.ndarray, b: np.ndarray, data_range: float, window: int):
    """Per-window luminance and contrast-structure maps, sample covariance."""
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    n = window * window
    cov_norm = n / (n - 1)
    lum_maps, cs_maps = [], []
    for c in range(a.shape[-1]):
        wa = sliding_window_view(a[..., c], (window, window))
        wb = sliding_window_view(b[..., c], (window, window))
        mu_a = wa.mean(axis=(-2, -1))
        mu_b = wb.mean(axis=(-2, -1))
        var_a = cov_norm * ((wa * wa).mean(axis=(-2, -1)) - mu_a * mu_a)
        var_b = cov_norm * ((wb * wb).mean(axis=(-2, -1)) - mu_b * mu_b)
        cov = cov_norm * ((wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b)
        lum_maps.append((2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1))
        cs_maps.append((2 * cov + c2) / (var_a + var_b + c2))
    return np.stack(lum_maps), np.stack(cs_maps)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 2.0, window: int = 7) -> float:
    """Mean SSIM over uniform valid windows; channels averaged. Defaults assume
    the working value range [-1, 1] (data_range 2)."""
    a, b = _channels(a), _channels(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < window:
        raise ValueError(f"image {a.shape[:2]} smaller than the {window}x{window} window")
    lum, cs = _ssim_components(a, b, data_range, window)
    return float((lum * cs).mean())


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    x = img[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def max_ms_ssim_scales(shape, window: int = 7, cap: int = 5) -> int:
    """Largest scale count such that the coarsest scale still fits one window."""
    s = 1
    while s < cap and min(shape[0], shape[1]) // (2**s) >= window:
        s += 1
    return s


def ms_ssim(
    a: np.ndarray, b: np.ndarray, data_range: float = 2.0, window: int = 7, scales: int | None = None
) -> float:
    """Multi-scale SSIM: contrast-structure at every scale, luminance only at
    the coarsest, combined with the conventional weights (renormalized when
    fewer than five scales are used; scales=None picks the most the image
    supports). Negative contrast-structure means are clamped to zero so
    fractional weights stay defined."""
    a, b = _channels(a), _channels(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    feasible = max_ms_ssim_scales(a.shape, window)
    if scales is None:
        scales = feasible
    if not 1 <= scales <= 5:
        raise ValueError(f"scales must be in [1, 5] (got {scales})")
    if scales > feasible:
        raise ValueError(
            f"image {a.shape[:2]} supports at most {feasible} scales with a {window}x{window} window"
        )
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    value = 1.0
    for s in range(scales):
        lum, cs = _ssim_components(a, b, data_range, window)
        mcs = max(float(cs.mean()), 0.0)
        if s == scales - 1:
            final = max(float((lum * cs).mean()), 0.0)
            value *= final**weights[s]
        else:
            value *= mcs**weights[s]
            a = np.stack([_downsample2(a[..., c]) for c in range(a.shape[-1])], axis=-1)
            b = np.stack([_downsample2(b[..., c]) for c in range(b.shape[-1])], axis=-1)
    return float(value)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """10*log10(peak^2 / MSE) in decibels; identical inputs give math.inf.
    The default peak matches 8-bit export values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_moments(feats: np.ndarray) -> tuple:
    """Mean and (unbiased) covariance of an (N, d) embedding set, computed on
    lexicographically sorted rows so the result is storage-order independent."""
    f = np.asarray(feats, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ValueError(f"need a nonempty (N, d) embedding array (got shape {f.shape})")
    f = f[np.lexsort(f.T[::-1])]
    mu = f.mean(axis=0)
    if f.shape[0] == 1:
        return mu, np.zeros((f.shape[1], f.shape[1]))
    return mu, np.cov(f, rowvar=False)


def frechet_distance(mu_a, cov_a, mu_b, cov_b, eps: float = 1e-6) -> float:
    """||mu_a - mu_b||^2 + tr(A + B - 2 (A B)^(1/2)) with A, B the covariances
    regularized by eps*I; the matrix square roots use eigendecomposition with
    negative eigenvalues clipped at zero."""
    mu_a, mu_b = np.asarray(mu_a, dtype=np.float64), np.asarray(mu_b, dtype=np.float64)
    d = mu_a.shape[0]
    a = np.asarray(cov_a, dtype=np.float64) + eps * np.eye(d)
    b = np.asarray(cov_b, dtype=np.float64) + eps * np.eye(d)
    wa, va = np.linalg.eigh(a)
    sqrt_a = (va * np.sqrt(np.clip(wa, 0.0, None))) @ va.T
    inner = sqrt_a @ b @ sqrt_a
    tr_sqrt = float(np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum())
    diff = mu_a - mu_b
    return max(float(diff @ diff + np.trace(a) + np.trace(b) - 2.0 * tr_sqrt), 0.0)


class Featurizer(nn.Module):
    """Small stain-domain classifier; the penultimate activations are the
    embedding space behind the Fréchet distance."""

    def __init__(self, n_domains: int, embed_dim: int = 64):
        super().__init__()
        self.n_domains = n_domains
        self.embed_dim = embed_dim
        self.conv = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.AdaptiveAvgPool2d(1),
        )
        self.fc = nn.Linear(64, embed_dim)
        self.head = nn.Linear(embed_dim, n_domains)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv(x).flatten(1)
        return nn.functional.silu(self.fc(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(x))


def embed_images(featurizer: Featurizer, images) -> np.ndarray:
    """(N, d) float64 embeddings for a list of H x W x 3 images in [-1, 1]."""
    if len(images) == 0:
        raise ValueError("empty image set")
    featurizer.eval()
    with torch.no_grad():
        batch = torch.cat([hwc_to_tensor(img) for img in images])
        return featurizer.embed(batch).double().numpy()


def frechet_feature_distance(set_a, set_b, featurizer: Featurizer) -> float:
    mu_a, cov_a = gaussian_moments(embed_images(featurizer, set_a))
    mu_b, cov_b = gaussian_moments(embed_images(featurizer, set_b))
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


def train_featurizer(
    corpus: Corpus,
    iterations: int = 400,
    batch_size: int = 32,
    lr: float = 1e-3,
    noise_std: float = 0.05,
    seed: int = 0,
) -> tuple:
    """Train the domain classifier on the corpus train split; returns
    (featurizer, test_accuracy). Slight input noise keeps embeddings smooth
    under small color shifts."""
    train_ids = corpus.sample_ids(split="train")
    test_ids = corpus.sample_ids(split="test") or train_ids
    if not train_ids:
        raise TrainingError("corpus has no training-split samples")

    def stack(ids):
        imgs, labels = [], []
        for sid in ids:
            for pos, d in enumerate(corpus.domains):
                imgs.append(hwc_to_tensor(corpus.image(sid, d.id))[0])
                labels.append(pos)
        return torch.stack(imgs), torch.tensor(labels)

    x_train, y_train = stack(train_ids)
    x_test, y_test = stack(test_ids)

    torch.manual_seed(derive_seed(seed, "featurizer-init"))
    net = Featurizer(len(corpus.domains))
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    g = torch.Generator().manual_seed(derive_seed(seed, "featurizer-batches"))
    net.train()
    for _ in range(iterations):
        idx = torch.randint(x_train.shape[0], (batch_size,), generator=g)
        xb = x_train[idx] + noise_std * torch.randn(x_train[idx].shape, generator=g)
        loss = nn.functional.cross_entropy(net(xb), y_train[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    with torch.no_grad():
        accuracy = float((net(x_test).argmax(dim=1) == y_test).double().mean())
    return net, accuracy


def save_featurizer(path, featurizer: Featurizer, accuracy: float) -> None:
    atomic_torch_save(
        {
            "state_dict": featurizer.state_dict(),
            "n_domains": featurizer.n_domains,
            "embed_dim": featurizer.embed_dim,
            "accuracy": accuracy,
        },
        path,
    )


def load_featurizer(path) -> tuple:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    net = Featurizer(payload["n_domains"], payload["embed_dim"])
    net.load_state_dict(payload["state_dict"])
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net, float(payload["accuracy"])


def featurizer_fingerprint(featurizer: Featurizer) -> str:
    return fingerprint_state_dict(featurizer.state_dict())


@dataclass(frozen=True)
class MetricRow:
    image_id: str
    ssim: float
    ms_ssim: float
    psnr_db: float


@dataclass(frozen=True)
class MetricBundle:
    rows: tuple
    count: int
    mean_ssim: float
    mean_ms_ssim: float
    mean_psnr_db: float
    frechet: float | None
    bootstrap_se: dict
    featurizer_fp: str | None
    lam: float | None

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["rows"] = [dataclasses.asdict(r) for r in self.rows]
        return d


def bootstrap_standard_error(values, resamples: int = 1000, seed: int = 0) -> float:
    """SE of the mean by nonparametric bootstrap with a fixed substream seed."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    rng = np.random.default_rng(derive_seed(seed, "bootstrap"))
    idx = rng.integers(0, v.size, size=(resamples, v.size))
    return float(v[idx].mean(axis=1).std(ddof=1))


def metric_report(
    pairs,
    lam: float | None = None,
    real_images=None,
    featurizer: Featurizer | None = None,
    resamples: int = 1000,
    seed: int = 0,
) -> MetricBundle:
    """pairs: (image_id, output, ground_truth) triples of [-1, 1] images.
    SSIM/MS-SSIM are computed in the working range; PSNR on 8-bit export
    values. The corpus-level Fréchet distance compares outputs against
    real_images through the featurizer when both are supplied."""
    if not pairs:
        raise ValueError("empty result set")
    rows = []
    for image_id, out, gt in pairs:
        rows.append(
            MetricRow(
                image_id=str(image_id),
                ssim=ssim(out, gt),
                ms_ssim=ms_ssim(out, gt),
                psnr_db=psnr(to_uint8(out).astype(np.float64), to_uint8(gt).astype(np.float64)),
            )
        )
    frechet = None
    featurizer_fp = None
    if real_images is not None and featurizer is not None:
        frechet = frechet_feature_distance([p[1] for p in pairs], list(real_images), featurizer)
        featurizer_fp = featurizer_fingerprint(featurizer)
    se = {
        "ssim": bootstrap_standard_error([r.ssim for r in rows], resamples, seed),
        "ms_ssim": bootstrap_standard_error([r.ms_ssim for r in rows], resamples, seed),
        "psnr_db": bootstrap_standard_error([r.psnr_db for r in rows], resamples, seed),
    }
    return MetricBundle(
        rows=tuple(rows),
        count=len(rows),
        mean_ssim=float(np.mean([r.ssim for r in rows])),
        mean_ms_ssim=float(np.mean([r.ms_ssim for r in rows])),
        mean_psnr_db=float(np.mean([r.psnr_db for r in rows])),
        frechet=frechet,
        bootstrap_se=se,
        featurizer_fp=featurizer_fp,
        lam=lam,
    )


METRIC_TABLE_HEADER = ("image_id", "lambda", "ssim", "ms_ssim", "psnr_db", "frechet")


def write_metric_table(bundles, path) -> None:
    """Delimited table with the fixed header; one row per image plus one
    'corpus' aggregate row per bundle carrying the means and the Fréchet
    distance (the only corpus-level metric)."""
    if isinstance(bundles, MetricBundle):
        bundles = [bundles]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(METRIC_TABLE_HEADER)
        for b in bundles:
            lam = "" if b.lam is None else f"{b.lam:.6g}"
            for r in b.rows:
                w.writerow([r.image_id, lam, f"{r.ssim:.8f}", f"{r.ms_ssim:.8f}", f"{r.psnr_db:.6f}", ""])
            frechet = "" if b.frechet is None else f"{b.frechet:.8f}"
            w.writerow(
                ["corpus", lam, f"{b.mean_ssim:.8f}", f"{b.mean_ms_ssim:.8f}", f"{b.mean_psnr_db:.6f}", frechet]
            )


def read_metric_table(path) -> list:
    """Rows as dicts keyed by the fixed header (numeric fields parsed when present)."""
    out = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRIC_TABLE_HEADER:
            raise ValueError(f"unexpected metric table header in {path}: {reader.fieldnames}")
        for row in reader:
            parsed = dict(row)
            for key in ("lambda", "ssim", "ms_ssim", "psnr_db", "frechet"):
                parsed[key] = float(row[key]) if row[key] not in ("", None) else None
            out.append(parsed)
    return out
