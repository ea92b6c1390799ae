"""Continuous, lattice-periodic and discrete Gaussians.

Conventions: ``f_sigma(x) = (sqrt(2 pi) sigma)^-n exp(-|x|^2 / 2 sigma^2)``,
the periodic density ``f_{sigma,L}(x) = sum_l f_sigma(x + l)`` and the
discrete Gaussian ``D_{L,sigma,c}(l) = f_sigma(l - c) / f_{sigma,L}(c)``.
"""
from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import special, stats

from . import _kernels
from .errors import DimensionMismatch, DimensionTooLarge, NonPositiveSigma, NotLatticePoint
from .lattice import CVP_MAX_DIM, Lattice, dual_lattice, mod_parallelepiped

DEFAULT_REL_TOL = 1e-12
# the dual (Fourier) form is used only when the flatness factor is below this
DUAL_ROUTE_MAX_EPS = 0.99
DUAL_ROUTE_MAX_POINTS = 1 << 16


def _check_sigma(sigma):
    if not (np.isfinite(sigma) and sigma > 0):
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")


def gaussian_density(sigma, x):
    """Isotropic Gaussian density ``f_sigma`` evaluated on the last axis of ``x``."""
    _check_sigma(sigma)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    return np.exp(-np.sum(x * x, axis=-1) / (2 * sigma ** 2)) / (math.sqrt(2 * math.pi) * sigma) ** n


@dataclass(frozen=True)
class GaussianProduct:
    sigma_sum: float
    sigma_bar: float
    center_bar: np.ndarray


def gaussian_product_decompose(sigma1, sigma2, c1, c2):
    """Write ``f_{s1}(x-c1) f_{s2}(x-c2)`` as ``f_s(c1-c2) f_sbar(x-cbar)``."""
    _check_sigma(sigma1)
    _check_sigma(sigma2)
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    if c1.shape != c2.shape:
        raise DimensionMismatch("centres have different shapes")
    v1, v2 = sigma1 ** 2, sigma2 ** 2
    vbar = 1.0 / (1.0 / v1 + 1.0 / v2)
    cbar = (vbar / v1) * c1 + (vbar / v2) * c2
    return GaussianProduct(math.sqrt(v1 + v2), math.sqrt(vbar), cbar)


def truncation_radius(L, sigma, rel_tol=DEFAULT_REL_TOL):
    """Ball radius for lattice sums around any centre.

    The covering bound guarantees a lattice point within reach of every
    centre; on top of it we add the Gaussian radius whose chi tail mass is
    below ``rel_tol / 10``.
    """
    t = math.sqrt(stats.chi2.isf(rel_tol / 10.0, L.dimension))
    return L.covering_bound + sigma * t


def _ball_count(n, r, volume):
    log_vb = 0.5 * n * math.log(math.pi) - special.gammaln(0.5 * n + 1)
    return math.exp(log_vb + n * math.log(max(r, 1e-300))) / volume


# ---------------------------------------------------------------------------
# one-dimensional sums on aZ


def _log_sum_1d(a, sigma, x, rel_tol=DEFAULT_REL_TOL):
    """``log sum_k exp(-(x - k a)^2 / 2 sigma^2)``, elementwise in ``x``."""
    x = np.asarray(x, dtype=np.float64)
    t = x - a * np.floor(x / a)
    reach = sigma * math.sqrt(stats.chi2.isf(rel_tol / 10.0, 1)) + a
    K = int(math.ceil(reach / a)) + 1
    k = np.arange(-K, K + 2, dtype=np.float64)
    d = t[..., None] - a * k
    return special.logsumexp(-d * d / (2 * sigma ** 2), axis=-1)


def _deviation_1d(a, sigma, x):
    """``a f_{sigma,aZ}(x) - 1`` through the Fourier series."""
    x = np.asarray(x, dtype=np.float64)
    ratio = sigma / a
    K = int(math.ceil(math.sqrt(40.0 / (2 * math.pi ** 2)) / ratio)) + 1
    k = np.arange(1, K + 1, dtype=np.float64)
    w = 2.0 * np.exp(-2 * math.pi ** 2 * ratio ** 2 * k * k)
    t = x - a * np.floor(x / a)
    return np.cos(2 * math.pi * t[..., None] * k / a) @ w


def _log_ratio_1d(a, sigma, x):
    if sigma / a >= 0.35:
        return np.log1p(_deviation_1d(a, sigma, x))
    return _log_sum_1d(a, sigma, x) + math.log(a) - math.log(math.sqrt(2 * math.pi) * sigma)


# ---------------------------------------------------------------------------
# periodic densities


def log_periodic_sum(L, sigma, x, rel_tol=DEFAULT_REL_TOL):
    """``log sum_l exp(-|x - l|^2 / 2 sigma^2)`` for each vector in ``x``."""
    _check_sigma(sigma)
    x = L._check(x)
    if L.is_diagonal:
        d = np.abs(np.diag(L.basis))
        return sum(_log_sum_1d(d[i], sigma, x[..., i], rel_tol) for i in range(L.dimension))
    if L.dimension > CVP_MAX_DIM:
        raise DimensionTooLarge(f"lattice sums are limited to n <= {CVP_MAX_DIM}")
    y = L.rotate(mod_parallelepiped(L, x))
    r = truncation_radius(L, sigma, rel_tol)
    out = _kernels.logsum_batch(L.r, np.atleast_2d(y), r * r, sigma * sigma)
    return out[0] if x.ndim == 1 else out


def log_periodic_density(L, sigma, x, rel_tol=DEFAULT_REL_TOL):
    n = L.dimension
    return log_periodic_sum(L, sigma, x, rel_tol) - n * math.log(math.sqrt(2 * math.pi) * sigma)


def periodic_density(L, sigma, x, rel_tol=DEFAULT_REL_TOL):
    """``f_{sigma,L}(x)`` with relative truncation error at most ``rel_tol``."""
    if not 0 < rel_tol <= 1e-3:
        raise ValueError("rel_tol must lie in (0, 1e-3]")
    return np.exp(log_periodic_density(L, sigma, x, rel_tol))


@lru_cache(maxsize=256)
def _dual_terms(L, sigma):
    """Nonzero dual points with weights ``exp(-2 pi^2 sigma^2 |l*|^2)`` above 1e-17.

    Returns ``None`` when the set would be too large to be worth using.
    """
    D = dual_lattice(L)
    r = math.sqrt(40.0 / (2 * math.pi ** 2)) / sigma
    count = _ball_count(L.dimension, r + D.covering_bound, D.volume)
    primal = _ball_count(L.dimension, truncation_radius(L, sigma), L.volume)
    if count > min(DUAL_ROUTE_MAX_POINTS, max(primal, 4096)):
        return None
    Z, d2 = _kernels.ball_points(D.r, np.zeros(L.dimension), r * r)
    keep = np.any(Z != 0, axis=1)
    pts = D.point(Z[keep])
    w = np.exp(-2 * math.pi ** 2 * sigma ** 2 * d2[keep])
    return pts, w


@lru_cache(maxsize=1024)
def dual_theta_excess(L, sigma):
    """``Theta_{L*}(2 pi sigma^2) - 1`` summed over nonzero dual points (no cancellation)."""
    _check_sigma(sigma)
    if L.is_diagonal:
        d = np.abs(np.diag(L.basis))
        logs = [math.log1p(_dual_excess_1d(a, sigma)) for a in d]
        return math.expm1(sum(logs))
    D = dual_lattice(L)
    s2 = 1.0 / (4 * math.pi ** 2 * sigma ** 2)
    r = truncation_radius(D, math.sqrt(s2), 1e-16)
    return _kernels.gauss_sum(D.r, np.zeros(L.dimension), r * r, s2, 0.0, True)


def _dual_excess_1d(a, sigma):
    ratio = sigma / a
    K = int(math.ceil(math.sqrt(40.0 / (2 * math.pi ** 2)) / ratio)) + 1
    k = np.arange(1, K + 1, dtype=np.float64)
    return float(2.0 * np.exp(-2 * math.pi ** 2 * ratio ** 2 * k * k).sum())


def folded_log_ratio(L, sigma, x):
    """``log(V(L) f_{sigma,L}(x))``, accurate even when the density is nearly flat."""
    _check_sigma(sigma)
    x = L._check(x)
    if L.is_diagonal:
        d = np.abs(np.diag(L.basis))
        return sum(_log_ratio_1d(d[i], sigma, x[..., i]) for i in range(L.dimension))
    terms = None
    if dual_theta_excess(L, sigma) < DUAL_ROUTE_MAX_EPS:
        terms = _dual_terms(L, sigma)
    if terms is not None:
        pts, w = terms
        X = np.atleast_2d(x)
        out = np.empty(X.shape[0])
        step = max(1, 2_000_000 // max(1, len(w)))
        for a in range(0, X.shape[0], step):
            out[a:a + step] = np.log1p(np.cos(2 * math.pi * (X[a:a + step] @ pts.T)) @ w)
        return out[0] if x.ndim == 1 else out
    return log_periodic_density(L, sigma, x) + math.log(L.volume)


def folded_deviation(L, sigma, x):
    """``V(L) f_{sigma,L}(x) - 1``."""
    return np.expm1(folded_log_ratio(L, sigma, x))


# ---------------------------------------------------------------------------
# discrete Gaussians


def _check_sampling_dim(L):
    if L.dimension > CVP_MAX_DIM:
        raise DimensionTooLarge(f"exact discrete Gaussian sampling is limited to n <= {CVP_MAX_DIM}")


def discrete_gaussian_support(L, sigma, c, rel_tol=DEFAULT_REL_TOL):
    """Enumerated support of ``D_{L,sigma,c}``: ``(points, probabilities)``."""
    _check_sigma(sigma)
    _check_sampling_dim(L)
    c = L._check(c)
    if c.ndim != 1:
        raise DimensionMismatch("support is computed for a single centre")
    r = truncation_radius(L, sigma, rel_tol)
    Z, d2 = _kernels.ball_points(L.r, L.rotate(c), r * r)
    w = np.exp(-(d2 - d2.min()) / (2 * sigma ** 2))
    return L.point(Z), w / w.sum()


def discrete_gaussian_pmf(L, sigma, c, lam, rel_tol=DEFAULT_REL_TOL):
    _check_sigma(sigma)
    c = L._check(c)
    lam = L._check(lam)
    if not np.all(L.contains(lam)):
        raise NotLatticePoint("pmf argument is not a lattice point")
    log_num = -np.sum((lam - c) ** 2, axis=-1) / (2 * sigma ** 2)
    return np.exp(log_num - log_periodic_sum(L, sigma, c, rel_tol))


def _centres(L, c, size):
    c = L._check(c)
    if c.ndim == 1 and size is not None:
        c = np.broadcast_to(c, (int(size), L.dimension))
    return c


def sample_discrete_gaussian(L, sigma, c, rng, size=None, method="exact", rel_tol=DEFAULT_REL_TOL):
    """Draw lattice points from ``D_{L,sigma,c}``.

    ``c`` may be one centre (optionally repeated ``size`` times) or a batch of
    centres, one draw per row.  ``method="klein"`` runs the randomized
    nearest-plane sampler, which is close to exact only for large ``sigma``.
    """
    _check_sigma(sigma)
    _check_sampling_dim(L)
    C = _centres(L, c, size)
    single = C.ndim == 1
    C2 = np.atleast_2d(C)
    if method == "exact":
        r = truncation_radius(L, sigma, rel_tol)
        U = rng.random(C2.shape[0])
        Z = _kernels.sample_batch(L.r, L.rotate(C2), r * r, sigma * sigma, U)
    elif method == "klein":
        Z = _klein(L, sigma, C2, rng)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    X = L.point(Z)
    return X[0] if single else X


def randomized_round(L, sigma_q, x, rng, method="exact"):
    """Randomised rounding: one draw from ``D_{L,sigma_q,x}`` per input vector."""
    return sample_discrete_gaussian(L, sigma_q, x, rng, method=method)


def _sample_1d(sigma, centres, rng, tail=12.0):
    """Exact draws from ``D_{Z,sigma_i,c_i}`` for vectors of widths and centres."""
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), centres.shape)
    half = int(math.ceil(tail * sigma.max())) + 2
    base = np.floor(centres)
    k = base[:, None] + np.arange(-half, half + 2)[None, :]
    logw = -((k - centres[:, None]) ** 2) / (2 * sigma[:, None] ** 2)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    cum = np.cumsum(w, axis=1)
    u = rng.random(len(centres)) * cum[:, -1]
    pick = np.minimum((cum <= u[:, None]).sum(axis=1), k.shape[1] - 1)
    return k[np.arange(len(centres)), pick]


def _klein(L, sigma, C, rng):
    R = L.r
    Y = L.rotate(C)
    n = L.dimension
    Z = np.zeros(Y.shape, np.int64)
    for i in range(n - 1, -1, -1):
        s = Y[:, i] - Z[:, i + 1:] @ R[i, i + 1:]
        Z[:, i] = _sample_1d(sigma / abs(R[i, i]), s / R[i, i], rng).astype(np.int64)
    return Z


@dataclass(frozen=True)
class GaussianDensity:
    """A Gaussian of width ``sigma`` at ``center``, optionally folded onto ``lattice``."""

    sigma: float
    center: np.ndarray
    lattice: Lattice | None = None
    rel_tol: float = DEFAULT_REL_TOL

    def __post_init__(self):
        _check_sigma(self.sigma)

    @property
    def truncation_radius(self):
        """Sum cut-off in units of ``sigma * sqrt(n)``."""
        if self.lattice is None:
            return math.inf
        n = self.lattice.dimension
        return truncation_radius(self.lattice, self.sigma, self.rel_tol) / (self.sigma * math.sqrt(n))

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64) - self.center
        if self.lattice is None:
            return gaussian_density(self.sigma, x)
        return periodic_density(self.lattice, self.sigma, x, self.rel_tol)

    def pmf(self, lam):
        return discrete_gaussian_pmf(self.lattice, self.sigma, self.center, lam, self.rel_tol)

    def sample(self, rng, size=None):
        return sample_discrete_gaussian(self.lattice, self.sigma, self.center, rng, size=size)
