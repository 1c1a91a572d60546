"""Synthetic multi-domain stain corpus with ground-truth cross-domain pairs,
plus sliding-window patch extraction for external image folders.

Every synthetic sample is a single-channel structure map ("content") rendered
under each stain domain by an invertible recolor transform, so any two domain
renders of one sample are pixel-aligned ground-truth pairs. Files are 8-bit
PNG; the in-memory convention is float images in [-1, 1] (see utils).
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigurationError, CorpusError
from .utils import derive_seed, load_image, save_image

MANIFEST_NAME = "manifest.json"
CONTENT_DIR = "content"


@dataclass(frozen=True)
class StainDomain:
    """One stain appearance: render01 = mix @ (c**gamma) + bias, applied to a
    content map c in [0, 1]; must be invertible so content can be recovered."""

    id: int
    name: str
    mix: np.ndarray  # (3, 3)
    bias: np.ndarray  # (3,)
    gamma: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "mix", np.asarray(self.mix, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=np.float64).reshape(3))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=np.float64).reshape(3))
        if abs(np.linalg.det(self.mix)) < 1e-10:
            raise ConfigurationError(f"domain {self.name!r}: mixing matrix is singular")
        if (self.gamma <= 0).any():
            raise ConfigurationError(f"domain {self.name!r}: tone exponents must be > 0")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "mix": self.mix.tolist(),
            "bias": self.bias.tolist(),
            "gamma": self.gamma.tolist(),
        }

    @staticmethod
    def from_json(d: dict) -> "StainDomain":
        return StainDomain(id=int(d["id"]), name=str(d["name"]), mix=d["mix"], bias=d["bias"], gamma=d["gamma"])


def palette_domain(domain_id: int, name: str, background, foreground, gamma=(1.0, 1.0, 1.0)) -> StainDomain:
    """Build a brightfield-style domain from background/foreground RGB in [0, 1].

    Rows mix 80% own-channel with 10% of each other channel, which keeps every
    channel monotone in content, hits exactly `foreground` at c=1, and stays
    invertible as long as foreground != background per channel.
    """
    bg = np.asarray(background, dtype=np.float64)
    fg = np.asarray(foreground, dtype=np.float64)
    d = fg - bg
    if (np.abs(d) < 1e-6).any():
        raise ConfigurationError(f"domain {name!r}: foreground must differ from background in every channel")
    mix = np.diag(d) @ (0.7 * np.eye(3) + 0.1 * np.ones((3, 3)))
    return StainDomain(id=domain_id, name=name, mix=mix, bias=bg, gamma=np.asarray(gamma, dtype=np.float64))


def default_domains() -> tuple:
    """Four stain analogs: a hematoxylin/eosin-like source and three special-stain targets."""
    return (
        palette_domain(0, "he", (0.94, 0.90, 0.95), (0.48, 0.20, 0.52)),
        palette_domain(1, "mas", (0.95, 0.93, 0.90), (0.16, 0.42, 0.52), gamma=(1.15, 0.90, 1.00)),
        palette_domain(2, "pas", (0.96, 0.92, 0.94), (0.62, 0.16, 0.40), gamma=(0.90, 1.10, 1.00)),
        palette_domain(3, "pasm", (0.93, 0.93, 0.91), (0.13, 0.11, 0.16), gamma=(1.20, 1.20, 1.15)),
    )


def render_domain(domain: StainDomain, content: np.ndarray) -> np.ndarray:
    """Render a content map (H x W in [0, 1]) as an H x W x 3 image in [-1, 1]."""
    c = np.asarray(content, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"content must be H x W (got shape {c.shape})")
    powered = np.power(c[..., None], domain.gamma)  # H x W x 3
    render01 = powered @ domain.mix.T + domain.bias
    return render01 * 2.0 - 1.0


def invert_render(domain: StainDomain, render: np.ndarray) -> np.ndarray:
    """Recover the content map from a domain render (inverse of render_domain)."""
    r = np.asarray(render, dtype=np.float64)
    if r.ndim != 3 or r.shape[-1] != 3:
        raise ValueError(f"render must be H x W x 3 (got shape {r.shape})")
    render01 = (r + 1.0) * 0.5
    powered = (render01 - domain.bias) @ np.linalg.inv(domain.mix).T
    content_per_channel = np.power(np.clip(powered, 0.0, 1.0), 1.0 / domain.gamma)
    return content_per_channel.mean(axis=-1)


def _quadratic_curve(p0, p1, p2, n):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2


def generate_content_field(size: int, rng: np.random.Generator) -> np.ndarray:
    """Threshold-free structure map in [0, 1]: anisotropic smooth bumps plus
    thin curvilinear ridges, sized to give mid-frequency structure."""
    scale = size / 64.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    field = np.zeros((size, size))
    n_bumps = max(1, int(round(rng.integers(16, 33) * scale**2)))
    for _ in range(n_bumps):
        cy, cx = rng.uniform(0, size, size=2)
        s1 = rng.uniform(2.5, 7.0) * scale
        s2 = rng.uniform(0.35, 1.0) * s1
        theta = rng.uniform(0, np.pi)
        amp = rng.uniform(0.35, 1.0)
        dy, dx = yy - cy, xx - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        field += amp * np.exp(-0.5 * ((u / s1) ** 2 + (v / s2) ** 2))

    ridges = np.zeros((size, size))
    n_ridges = max(1, int(round(rng.integers(3, 8) * scale)))
    for _ in range(n_ridges):
        pts = rng.uniform(0, size, size=(3, 2))
        curve = _quadratic_curve(pts[0], pts[1], pts[2], 6 * size)
        iy = np.clip(curve[:, 0].round().astype(int), 0, size - 1)
        ix = np.clip(curve[:, 1].round().astype(int), 0, size - 1)
        mask = np.zeros((size, size))
        mask[iy, ix] = 1.0
        width = rng.uniform(0.8, 1.6) * scale
        blurred = gaussian_filter(mask, sigma=width)
        peak = blurred.max()
        if peak > 0:
            ridges += rng.uniform(0.5, 1.0) * blurred / peak

    field = field + 1.2 * ridges
    peak = field.max()
    return field / peak if peak > 0 else field


@dataclass(frozen=True)
class SampleRecord:
    id: str
    domain: int
    path: str
    split: str


@dataclass(frozen=True)
class CorpusManifest:
    corpus_root: str
    seed: int
    domains: tuple
    samples: tuple

    def to_json(self) -> dict:
        return {
            "corpus_root": self.corpus_root,
            "seed": self.seed,
            "domains": [d.to_json() for d in self.domains],
            "samples": [
                {"id": s.id, "domain": s.domain, "path": s.path, "split": s.split} for s in self.samples
            ],
        }

    @staticmethod
    def from_json(d: dict) -> "CorpusManifest":
        return CorpusManifest(
            corpus_root=str(d["corpus_root"]),
            seed=int(d["seed"]),
            domains=tuple(StainDomain.from_json(x) for x in d["domains"]),
            samples=tuple(
                SampleRecord(id=str(s["id"]), domain=int(s["domain"]), path=str(s["path"]), split=str(s["split"]))
                for s in d["samples"]
            ),
        )


def generate_synthetic_corpus(
    out_dir,
    n_samples: int,
    domains=None,
    image_size: int = 64,
    seed: int = 0,
    test_fraction: float = 0.2,
) -> CorpusManifest:
    """Write a paired multi-domain corpus: for each sample, one content map
    (.npy) and one PNG render per domain. Identical seeds give byte-identical
    corpora. Returns the manifest, also written as manifest.json."""
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1 (got {n_samples})")
    domains = tuple(domains) if domains is not None else default_domains()
    if len(domains) < 2:
        raise ConfigurationError("need at least 2 stain domains")
    ids = [d.id for d in domains]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"domain ids must be unique (got {ids})")

    root = Path(out_dir)
    try:
        (root / CONTENT_DIR).mkdir(parents=True, exist_ok=True)
        for d in domains:
            (root / d.name).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorpusError(f"cannot create corpus directories under {root}: {e}") from e

    n_test = int(round(n_samples * test_fraction))
    records = []
    for i in range(n_samples):
        sample_id = f"s{i:05d}"
        split = "test" if i >= n_samples - n_test else "train"
        rng = np.random.default_rng(derive_seed(seed, "sample", str(i)))
        content = generate_content_field(image_size, rng)
        np.save(root / CONTENT_DIR / f"{sample_id}.npy", content)
        for d in domains:
            rel = f"{d.name}/{sample_id}.png"
            save_image(render_domain(d, content), root / rel)
            records.append(SampleRecord(id=sample_id, domain=d.id, path=rel, split=split))

    manifest = CorpusManifest(corpus_root=".", seed=seed, domains=domains, samples=tuple(records))
    with open(root / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


class Corpus:
    """Lazily readable view over a generated corpus, grouped by domain and split."""

    def __init__(self, manifest: CorpusManifest, root):
        self.manifest = manifest
        self.root = Path(root)
        self._by_key = {(s.id, s.domain): s for s in manifest.samples}

    @property
    def domains(self) -> tuple:
        return self.manifest.domains

    def domain_by_id(self, domain_id: int) -> StainDomain:
        for d in self.manifest.domains:
            if d.id == domain_id:
                return d
        raise KeyError(f"no domain with id {domain_id}")

    def domain_by_name(self, name: str) -> StainDomain:
        for d in self.manifest.domains:
            if d.name == name:
                return d
        raise KeyError(f"no domain named {name!r}")

    def sample_ids(self, split=None) -> list:
        seen, out = set(), []
        for s in self.manifest.samples:
            if s.id not in seen and (split is None or s.split == split):
                seen.add(s.id)
                out.append(s.id)
        return out

    def record(self, sample_id: str, domain_id: int) -> SampleRecord:
        try:
            return self._by_key[(sample_id, domain_id)]
        except KeyError:
            raise KeyError(f"no record for sample {sample_id!r} in domain {domain_id}") from None

    def image(self, sample_id: str, domain_id: int) -> np.ndarray:
        """H x W x 3 float image in [-1, 1]."""
        return load_image(self.root / self.record(sample_id, domain_id).path)

    def content(self, sample_id: str) -> np.ndarray:
        path = self.root / CONTENT_DIR / f"{sample_id}.npy"
        if not path.exists():
            raise CorpusError(f"content map missing for sample {sample_id!r}: {path}")
        return np.load(path)

    def __len__(self) -> int:
        return len(self.manifest.samples)


def load_corpus(manifest_path) -> Corpus:
    """Load and validate a corpus manifest; every referenced file must exist."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise CorpusError(f"cannot read manifest {manifest_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CorpusError(f"malformed manifest {manifest_path}: {e}") from e

    try:
        manifest = CorpusManifest.from_json(raw)
    except (KeyError, TypeError, ValueError) as e:
        raise CorpusError(f"malformed manifest {manifest_path}: {e}") from e

    root = (manifest_path.parent / manifest.corpus_root).resolve()
    domain_ids = {d.id for d in manifest.domains}
    splits_by_id = {}
    for s in manifest.samples:
        if s.domain not in domain_ids:
            raise CorpusError(f"sample {s.id!r} references unknown domain {s.domain}")
        if not (root / s.path).exists():
            raise CorpusError(f"missing image file for sample {s.id!r}: {root / s.path}")
        prev = splits_by_id.setdefault(s.id, s.split)
        if prev != s.split:
            raise CorpusError(f"sample {s.id!r} appears in both splits {prev!r} and {s.split!r}")
    return Corpus(manifest, root)


@dataclass(frozen=True)
class PatchSpec:
    size: int = 256
    overlap: int = 192

    def __post_init__(self):
        if not 0 <= self.overlap < self.size:
            raise ConfigurationError(f"need 0 <= overlap < size (got size={self.size}, overlap={self.overlap})")

    @property
    def stride(self) -> int:
        return self.size - self.overlap


@dataclass(frozen=True)
class Patch:
    y: int
    x: int
    data: np.ndarray = field(repr=False)


def _window_starts(extent: int, size: int, stride: int) -> list:
    starts = list(range(0, extent - size + 1, stride))
    if starts[-1] != extent - size:  # clamp the trailing window to the edge
        starts.append(extent - size)
    return starts


def extract_patches(image: np.ndarray, spec: PatchSpec) -> list:
    """Raster-order sliding-window patches with stride size - overlap; trailing
    windows clamp to the image edge so every pixel is covered."""
    img = np.asarray(image)
    if img.ndim not in (2, 3):
        raise ValueError(f"image must be H x W or H x W x C (got shape {img.shape})")
    h, w = img.shape[:2]
    if h < spec.size or w < spec.size:
        raise ValueError(f"image {h}x{w} is smaller than patch size {spec.size}")
    patches = []
    for y in _window_starts(h, spec.size, spec.stride):
        for x in _window_starts(w, spec.size, spec.stride):
            patches.append(Patch(y=y, x=x, data=img[y : y + spec.size, x : x + spec.size].copy()))
    return patches


def foreground_fraction(patch: np.ndarray, background_level: float = 0.7) -> float:
    """Fraction of pixels darker than the brightfield background level
    (patch in [-1, 1]; background_level in [-1, 1])."""
    lum = np.asarray(patch, dtype=np.float64)
    if lum.ndim == 3:
        lum = lum.mean(axis=-1)
    return float((lum < background_level).mean())


def ingest_image_folder(
    src_dir,
    out_dir,
    spec: PatchSpec = PatchSpec(),
    min_foreground: float = 0.0,
    background_level: float = 0.7,
) -> list:
    """Patch every RGB image in a folder; keep patches whose foreground
    fraction meets the threshold. Returns (source, y, x, out_path) records.

    The threshold is an explicit knob with no calibrated default: sweeps of it
    are left to the caller.
    """
    src, out = Path(src_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for name in sorted(os.listdir(src)):
        if not name.lower().endswith((".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")):
            continue
        img = load_image(src / name)
        stem = Path(name).stem
        for p in extract_patches(img, spec):
            if min_foreground > 0 and foreground_fraction(p.data, background_level) < min_foreground:
                continue
            rel = f"{stem}_y{p.y:05d}_x{p.x:05d}.png"
            save_image(p.data, out / rel)
            records.append((name, p.y, p.x, str(out / rel)))
    return records
