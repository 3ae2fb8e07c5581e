"""Semantic guidance: feature fields to diffusion tensors and permission gates.

A guidance provider supplies, per outer iteration, the diffusion tensor field
steering pressure transport and a permission field gating membrane expansion.
Feature-based providers derive both from a C x H x W feature field via the
structure-tensor pipeline; synthetic providers construct them directly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .fields import Grid, ScalarField, TensorField

logger = logging.getLogger(__name__)

EIGEN_EPS = 1e-8       # regularizer in the coherence denominator
EIGEN_TIE_GAP = 1e-6   # relative gap below which the eigenbasis defaults to axes


@dataclass
class GuidanceConfig:
    tensor_sigma: float = 0.5   # structure-tensor smoothing, feature pixels
    beta: float = 15.0          # anisotropy strength: d1 = 1/(1 + beta*c)
    tau: float = 0.1            # prototype-score softmax temperature
    temp: float = 0.2           # permission sigmoid temperature
    epsilon: float = 0.05       # expansion-drive floor
    ema_rate: float = 0.1
    prototype_count: int = 32
    occupancy_threshold: float = 0.9  # cells eligible for prototype sampling
    refresh_stride: int = 1     # recompute guidance every k outer iterations

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        for name in ("tensor_sigma", "beta", "tau", "temp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class FeatureField:
    """C x H x W feature stack from a provider."""

    values: np.ndarray
    source: str = "synthetic"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError("features must be C x H x W")
        if v.shape[1] < 8 or v.shape[2] < 8:
            raise ValueError("feature grid must be at least 8 x 8")
        if not np.all(np.isfinite(v)):
            raise ValueError("features contain non-finite values")
        self.values = v

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass
class PrototypeSet:
    """Unit-norm feature prototypes maintained by EMA from interior samples."""

    vectors: np.ndarray | None = None
    ema_rate: float = 0.1
    short_supply: bool = False  # set when sampling had to use replacement


@dataclass
class DiffusionTensorField(TensorField):
    """Diffusion tensor with cached eigenstructure (e1 across, e2 along)."""

    e1: np.ndarray | None = None
    coherence: np.ndarray | None = None


@dataclass
class Guidance:
    D: DiffusionTensorField
    permission: ScalarField


def standardize_features(f: FeatureField) -> FeatureField:
    """Zero-mean unit-std per channel (std floored at 1e-6)."""
    v = f.values
    mean = v.mean(axis=(1, 2), keepdims=True)
    std = np.maximum(v.std(axis=(1, 2), keepdims=True), 1e-6)
    return FeatureField((v - mean) / std, f.source)


def _grad2d(a: np.ndarray):
    """Central differences, one-sided at the borders (numpy.gradient order: y, x)."""
    gy, gx = np.gradient(a)
    return gx, gy


def structure_tensor(f: FeatureField, sigma: float, grid: Grid | None = None) -> TensorField:
    """Gaussian-smoothed sum over channels of grad(f_c) grad(f_c)^T."""
    _, h, w = f.values.shape
    sxx = np.zeros((h, w))
    sxy = np.zeros((h, w))
    syy = np.zeros((h, w))
    for c in range(f.values.shape[0]):
        gx, gy = _grad2d(f.values[c])
        sxx += gx * gx
        sxy += gx * gy
        syy += gy * gy
    sxx = gaussian_filter(sxx, sigma)
    sxy = gaussian_filter(sxy, sigma)
    syy = gaussian_filter(syy, sigma)
    return TensorField(grid or Grid(width=w, height=h), sxx, sxy, syy)


def eigen_coherence(S: TensorField):
    """Eigenstructure of a symmetric 2x2 field: (e1, e2, lam1, lam2, coherence).

    lam1 >= lam2; e1 is the dominant direction (largest feature variation),
    e2 orthogonal. Near-isotropic cells (relative eigenvalue gap < 1e-6) use
    the coordinate axes as the basis.
    """
    a, b, d = S.xx, S.xy, S.yy
    trace = a + d
    disc = np.sqrt(np.maximum((a - d) ** 2 + 4.0 * b * b, 0.0))
    lam1 = 0.5 * (trace + disc)
    lam2 = 0.5 * (trace - disc)
    c = (lam1 - lam2) / (lam1 + lam2 + EIGEN_EPS)

    # eigenvector for lam1: (b, lam1 - a); for diagonal S pick the larger axis
    v1x = np.where(np.abs(b) > 0, b, np.where(a >= d, 1.0, 0.0))
    v1y = np.where(np.abs(b) > 0, lam1 - a, np.where(a >= d, 0.0, 1.0))
    norm = np.hypot(v1x, v1y)
    tie = disc <= EIGEN_TIE_GAP * np.maximum(np.abs(trace), 1e-300)
    degenerate = tie | (norm < 1e-30)
    safe = np.maximum(norm, 1e-30)
    e1 = np.stack([np.where(degenerate, 1.0, v1x / safe),
                   np.where(degenerate, 0.0, v1y / safe)], axis=-1)
    e2 = np.stack([-e1[..., 1], e1[..., 0]], axis=-1)
    return e1, e2, lam1, lam2, np.where(degenerate, 0.0, c)


def diffusion_tensor(e1: np.ndarray, coherence: np.ndarray, beta: float,
                     grid: Grid | None = None) -> DiffusionTensorField:
    """D = d1 e1 e1^T + d2 e2 e2^T with d2 = 1, d1 = 1/(1 + beta*c).

    Assembled as I - (1 - d1) e1 e1^T so the isotropic case (c = 0) is the
    identity exactly. Condition number is 1 + beta*c, i.e. 16 at c = 1 with
    the default beta.
    """
    d1 = 1.0 / (1.0 + beta * coherence)
    w = 1.0 - d1
    xx = 1.0 - w * e1[..., 0] * e1[..., 0]
    xy = -w * e1[..., 0] * e1[..., 1]
    yy = 1.0 - w * e1[..., 1] * e1[..., 1]
    g = grid or Grid(width=coherence.shape[1], height=coherence.shape[0])
    return DiffusionTensorField(g, xx, xy, yy, e1=e1, coherence=coherence)


def update_prototypes(features: FeatureField, union_occupancy: ScalarField,
                      prototypes: PrototypeSet, rng: np.random.Generator,
                      config: GuidanceConfig) -> PrototypeSet:
    """Sample high-occupancy cells and EMA-update the prototype vectors.

    The feature grid must already be aligned with the occupancy grid. The
    first call initializes prototypes directly from the (normalized) samples.
    """
    c, h, w = features.values.shape
    if union_occupancy.values.shape != (h, w):
        raise ValueError("features are not aligned with the occupancy grid")
    rows, cols = np.nonzero(union_occupancy.values > config.occupancy_threshold)
    k = config.prototype_count
    short = len(rows) < k
    if len(rows) == 0:
        logger.warning("no high-occupancy cells; keeping previous prototypes")
        return prototypes
    if short:
        logger.warning("only %d high-occupancy cells for %d prototypes; sampling with replacement",
                       len(rows), k)
    pick = rng.choice(len(rows), size=k, replace=short or len(rows) < k)
    samples = features.values[:, rows[pick], cols[pick]].T  # (k, C)
    samples = _normalize_rows(samples)
    if prototypes.vectors is None:
        return PrototypeSet(samples, prototypes.ema_rate, short)
    eta = prototypes.ema_rate
    if eta == 0.0:
        return PrototypeSet(prototypes.vectors, eta, short)
    mixed = (1.0 - eta) * prototypes.vectors + eta * samples
    return PrototypeSet(_normalize_rows(mixed), eta, short)


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.maximum(n, 1e-30)


def permission_field(features: FeatureField, prototypes: PrototypeSet,
                     interior_mask: np.ndarray, tau: float, temp: float,
                     grid: Grid | None = None,
                     epsilon_floor: float = 0.05) -> ScalarField:
    """Soft nearest-prototype score, sigmoid-calibrated at the interior median.

    score(x) = tau * log sum_k exp(cos(f(x), f*_k) / tau);
    pi(x) = sigmoid((score(x) - median_interior(score)) / temp).
    Zero feature vectors have cosine 0 against every prototype.
    """
    c, h, w = features.values.shape
    g = grid or Grid(width=w, height=h)
    if prototypes.vectors is None:
        raise ValueError("prototypes not initialized")
    flat = features.values.reshape(c, -1).T  # (n, C)
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    unit = flat / np.maximum(norms, 1e-30)
    cos = unit @ prototypes.vectors.T  # (n, K)
    cos[norms[:, 0] < 1e-30] = 0.0
    m = cos.max(axis=1)
    score = (m + tau * np.log(np.sum(np.exp((cos - m[:, None]) / tau), axis=1))).reshape(h, w)
    if not interior_mask.any():
        logger.warning("empty interior mask; permission floored at %.2f", epsilon_floor)
        return ScalarField(g, np.full((h, w), epsilon_floor))
    med = float(np.median(score[interior_mask]))
    pi = 1.0 / (1.0 + np.exp(-(score - med) / temp))
    return ScalarField(g, pi)


def gated_drive(w_band: ScalarField, permission: ScalarField,
                epsilon: float = 0.05) -> ScalarField:
    """w_drive = w_band * (epsilon + (1 - epsilon) * permission)."""
    gate = epsilon + (1.0 - epsilon) * permission.values
    return ScalarField(w_band.grid, w_band.values * gate)


# ---------------------------------------------------------------------------
# Resampling between the feature grid and the engine grid.
# ---------------------------------------------------------------------------

def _bilinear_resize(a: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resample treating samples as cell centers (aligned extents)."""
    h, w = a.shape
    if (h, w) == (height, width):
        return a.copy()
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    xs = (np.arange(width) + 0.5) * w / width - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    a00 = a[np.ix_(y0, x0)]
    a01 = a[np.ix_(y0, x1)]
    a10 = a[np.ix_(y1, x0)]
    a11 = a[np.ix_(y1, x1)]
    return (1 - fy) * ((1 - fx) * a00 + fx * a01) + fy * ((1 - fx) * a10 + fx * a11)


def resample_scalar(field: ScalarField, grid: Grid) -> ScalarField:
    return ScalarField(grid, _bilinear_resize(field.values, grid.height, grid.width))


def resample_features(f: FeatureField, grid: Grid) -> FeatureField:
    v = np.stack([_bilinear_resize(ch, grid.height, grid.width) for ch in f.values])
    return FeatureField(v, f.source)


def resample_guidance(D: TensorField, grid: Grid, beta: float) -> DiffusionTensorField:
    """Resample a tensor field componentwise, then re-project to SPD.

    Bilinear weights are convex, so eigenvalues stay within per-cell bounds;
    the clamp to [1/(1+beta), 1] guards rounding.
    """
    xx = _bilinear_resize(D.xx, grid.height, grid.width)
    xy = _bilinear_resize(D.xy, grid.height, grid.width)
    yy = _bilinear_resize(D.yy, grid.height, grid.width)
    S = TensorField(grid, xx, xy, yy)
    e1, e2, lam1, lam2, _ = eigen_coherence(S)
    lo, hi = 1.0 / (1.0 + beta), 1.0
    lam1 = np.clip(lam1, lo, hi)
    lam2 = np.clip(lam2, lo, hi)
    xx = lam1 * e1[..., 0] ** 2 + lam2 * e2[..., 0] ** 2
    xy = lam1 * e1[..., 0] * e1[..., 1] + lam2 * e2[..., 0] * e2[..., 1]
    yy = lam1 * e1[..., 1] ** 2 + lam2 * e2[..., 1] ** 2
    # eigen cache dropped: D's dominant eigenvector is the along-structure
    # direction, opposite to the structure-tensor convention
    return DiffusionTensorField(grid, xx, xy, yy)


# ---------------------------------------------------------------------------
# Guidance providers.
# ---------------------------------------------------------------------------

class ConstantDirectionProvider:
    """Uniform coherence c0 with a fixed across-structure axis e1.

    The membrane preferentially expands along e2 = rot90(e1). Permission is
    identically 1, so only the directional bias differs from isotropic mode.
    """

    def __init__(self, e1_angle: float, coherence: float):
        if not 0.0 <= coherence <= 1.0:
            raise ValueError("coherence must lie in [0, 1]")
        self.e1 = np.array([math.cos(e1_angle), math.sin(e1_angle)])
        self.coherence = float(coherence)

    def guidance(self, grid: Grid, union_occ: ScalarField,
                 rng: np.random.Generator, iteration: int,
                 config: GuidanceConfig) -> Guidance:
        shape = (grid.height, grid.width)
        e1 = np.broadcast_to(self.e1, shape + (2,))
        coh = np.full(shape, self.coherence)
        D = diffusion_tensor(e1, coh, config.beta, grid)
        return Guidance(D, ScalarField(grid, np.ones(shape)))


class _FeaturePipelineProvider:
    """Shared feature -> (D, permission) pipeline with prototype state."""

    def __init__(self, config: GuidanceConfig | None = None):
        self.prototypes = PrototypeSet()
        self._cached: Guidance | None = None

    def _features(self, grid: Grid, iteration: int) -> FeatureField:
        raise NotImplementedError

    def guidance(self, grid: Grid, union_occ: ScalarField,
                 rng: np.random.Generator, iteration: int,
                 config: GuidanceConfig) -> Guidance:
        if self._cached is not None and iteration % max(config.refresh_stride, 1) != 0:
            return self._cached
        raw = self._features(grid, iteration)
        std = standardize_features(raw)
        S = structure_tensor(std, config.tensor_sigma)
        e1, _, _, _, coh = eigen_coherence(S)
        D_native = diffusion_tensor(e1, coh, config.beta, S.grid)
        D = resample_guidance(D_native, grid, config.beta)
        feats = resample_features(std, grid)
        self.prototypes = PrototypeSet(self.prototypes.vectors, config.ema_rate,
                                       self.prototypes.short_supply)
        self.prototypes = update_prototypes(feats, union_occ, self.prototypes, rng, config)
        if self.prototypes.vectors is None:
            logger.warning("prototypes unavailable; permission defaults to 1")
            pi = ScalarField(grid, np.ones((grid.height, grid.width)))
        else:
            pi = permission_field(feats, self.prototypes, union_occ.values > 0.5,
                                  config.tau, config.temp, grid, config.epsilon)
        self._cached = Guidance(D, pi)
        return self._cached


class SilhouetteProvider(_FeaturePipelineProvider):
    """One-channel features from a blurred grayscale image (desk-scale testing)."""

    def __init__(self, image, blur_sigma: float = 2.0):
        super().__init__()
        self.image = np.asarray(image, dtype=np.float64)
        if self.image.ndim != 2:
            raise ValueError("silhouette image must be 2D grayscale")
        self.blur_sigma = blur_sigma

    @staticmethod
    def from_file(path, blur_sigma: float = 2.0) -> "SilhouetteProvider":
        path = str(path)
        if path.endswith(".npy"):
            img = np.load(path)
        else:
            from PIL import Image
            img = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
        return SilhouetteProvider(img, blur_sigma)

    def _features(self, grid: Grid, iteration: int) -> FeatureField:
        blurred = gaussian_filter(self.image, self.blur_sigma)
        return FeatureField(blurred[None], source="silhouette")


class FeatureDumpProvider(_FeaturePipelineProvider):
    """Features read from a dump file written by the extraction bridge."""

    def __init__(self, path):
        super().__init__()
        from .bridge_io import read_feature_dump
        self._field = read_feature_dump(path)

    def _features(self, grid: Grid, iteration: int) -> FeatureField:
        return self._field
