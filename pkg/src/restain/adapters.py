"""Feature adapters: image -> image functions that supply a target-style
reference for the style trajectory.

All adapters are shape-preserving and return finite images in [-1, 1]; calls
go through __call__, which validates the output. The oracle variants exploit
the synthetic corpus' invertible renders and exist to give ground-truth-exact
(or controllably degraded) references; histogram matching and external lookup
are the routes real adapter outputs plug in through.
"""

import numpy as np
from pathlib import Path
from scipy.ndimage import gaussian_filter

from .data import StainDomain, invert_render, render_domain
from .errors import AdapterError
from .utils import derive_seed, fingerprint_array, load_image


class FeatureAdapter:
    """Base: subclasses implement apply(image, sample_id) -> image."""

    name = "adapter"

    def apply(self, image: np.ndarray, sample_id=None) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, image: np.ndarray, sample_id=None) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[-1] != 3:
            raise ValueError(f"adapter input must be H x W x 3 (got shape {img.shape})")
        out = np.asarray(self.apply(img, sample_id), dtype=np.float64)
        if out.shape != img.shape:
            raise AdapterError(f"{self.name}: output shape {out.shape} != input shape {img.shape}")
        if not np.isfinite(out).all():
            raise AdapterError(f"{self.name}: output contains non-finite values")
        if out.min() < -1.0 - 1e-9 or out.max() > 1.0 + 1e-9:
            raise AdapterError(f"{self.name}: output outside [-1, 1] (range [{out.min()}, {out.max()}])")
        return out


class IdentityAdapter(FeatureAdapter):
    name = "identity"

    def apply(self, image, sample_id=None):
        return image


class OracleRecolorAdapter(FeatureAdapter):
    """Exact recolorer: inverts the (known) source-domain render to the content
    map and re-renders it under the target domain. Only meaningful on images
    actually produced by the source domain's render."""

    name = "oracle"

    def __init__(self, target: StainDomain, source: StainDomain):
        self.target = target
        self.source = source

    def apply(self, image, sample_id=None):
        return render_domain(self.target, invert_render(self.source, image))


class NoisyOracleAdapter(OracleRecolorAdapter):
    """Oracle recolorer plus a seeded smooth perturbation field of the given
    amplitude, emulating an imperfect learned adapter. The field is derived
    from (seed, image contents), so repeated calls on the same image agree."""

    name = "noisy-oracle"

    def __init__(self, target: StainDomain, source: StainDomain, noise_level: float, seed: int = 0, sigma: float = 4.0):
        super().__init__(target, source)
        if noise_level < 0:
            raise ValueError(f"noise_level must be >= 0 (got {noise_level})")
        self.noise_level = float(noise_level)
        self.seed = seed
        self.sigma = sigma

    def apply(self, image, sample_id=None):
        clean = super().apply(image, sample_id)
        if self.noise_level == 0.0:
            return clean
        rng = np.random.default_rng(derive_seed(self.seed, "noisy-oracle", fingerprint_array(image)))
        field = rng.standard_normal(clean.shape)
        field = gaussian_filter(field, sigma=(self.sigma, self.sigma, 0.0))
        field /= max(field.std(), 1e-12)
        return np.clip(clean + self.noise_level * field, -1.0, 1.0)


class HistogramMatchAdapter(FeatureAdapter):
    """Maps each channel's empirical distribution onto the pooled distribution
    of a nonempty reference image set (classic histogram matching)."""

    name = "histogram-match"

    def __init__(self, reference_images):
        refs = [np.asarray(r, dtype=np.float64) for r in reference_images]
        if not refs:
            raise ValueError("reference set must be nonempty")
        for r in refs:
            if r.ndim != 3 or r.shape[-1] != 3:
                raise ValueError(f"reference images must be H x W x 3 (got shape {r.shape})")
        pooled = np.concatenate([r.reshape(-1, 3) for r in refs], axis=0)
        self._ref_values = []
        self._ref_quantiles = []
        for c in range(3):
            values, counts = np.unique(pooled[:, c], return_counts=True)
            self._ref_values.append(values)
            self._ref_quantiles.append(np.cumsum(counts) / pooled.shape[0])

    def apply(self, image, sample_id=None):
        out = np.empty_like(image)
        for c in range(3):
            src = image[..., c].ravel()
            values, inverse, counts = np.unique(src, return_inverse=True, return_counts=True)
            quantiles = np.cumsum(counts) / src.size
            matched = np.interp(quantiles, self._ref_quantiles[c], self._ref_values[c])
            out[..., c] = matched[inverse].reshape(image.shape[:2])
        return out


class ExternalImageAdapter(FeatureAdapter):
    """Returns precomputed reference images from another tool, looked up by
    sample id; the hook through which externally generated adapter outputs
    (e.g. GAN translations) enter the pipeline."""

    name = "external"

    def __init__(self, lookup: dict):
        self.lookup = {str(k): Path(v) for k, v in dict(lookup).items()}
        for sid, path in self.lookup.items():
            if not path.exists():
                raise AdapterError(f"external adapter image for sample {sid!r} does not exist: {path}")

    def apply(self, image, sample_id=None):
        if sample_id is None or str(sample_id) not in self.lookup:
            raise AdapterError(f"external adapter has no image for sample {sample_id!r}")
        ref = load_image(self.lookup[str(sample_id)])
        if ref.shape != image.shape:
            raise AdapterError(
                f"external adapter image for sample {sample_id!r} has shape {ref.shape}, expected {image.shape}"
            )
        return ref


def oracle_recolor_adapter(target: StainDomain, source: StainDomain) -> FeatureAdapter:
    return OracleRecolorAdapter(target, source)


def noisy_oracle_adapter(target: StainDomain, source: StainDomain, noise_level: float, seed: int = 0) -> FeatureAdapter:
    return NoisyOracleAdapter(target, source, noise_level, seed)


def histogram_match_adapter(reference_images) -> FeatureAdapter:
    return HistogramMatchAdapter(reference_images)


def external_image_adapter(lookup: dict) -> FeatureAdapter:
    return ExternalImageAdapter(lookup)
