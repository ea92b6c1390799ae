"""Theta series, flatness factors, smoothing parameters and mod-lattice capacities.

Three distances between the folded Gaussian ``f_{sigma,L}`` and the uniform
density ``1/V`` on a fundamental region are provided:

* ``linf``: ``max |V f - 1|``, exactly from theta series;
* ``l1``:   ``int |f - 1/V|`` by quadrature (n <= 3) or Monte Carlo;
* ``kl``:   ``log V - h(f)``, which is also the capacity of the mod-L channel.
"""
from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from numpy.polynomial import legendre
from scipy import integrate, optimize

from . import _kernels
from .errors import (DimensionTooLarge, MethodUnsupported, NonBracketed, NonPositiveSigma,
                     QuadratureFailure)
from .estimates import Estimate, as_generator, map_chunks, mean_estimate
from .gaussian import (_ball_count, _dual_excess_1d, dual_theta_excess, folded_deviation,
                       folded_log_ratio, truncation_radius)
from .lattice import CVP_MAX_DIM, quotient, vnr

THETA_MAX_POINTS = 50_000_000


@dataclass(frozen=True)
class FlatnessReport:
    metric: str
    sigma: float
    vnr: float
    value: float
    ci_halfwidth: float = 0.0
    method: str = "theta"
    samples: int = 0
    theta: float | None = field(default=None, compare=False)


def _check_sigma(sigma):
    if not (np.isfinite(sigma) and sigma > 0):
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")


def theta_series(L, tau, rel_tol=1e-15):
    """``sum_l exp(-pi tau |l|^2)`` by direct enumeration of a ball around 0."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if L.dimension > CVP_MAX_DIM:
        raise DimensionTooLarge(f"theta series enumeration is limited to n <= {CVP_MAX_DIM}")
    s = 1.0 / math.sqrt(2 * math.pi * tau)
    r = truncation_radius(L, s, rel_tol)
    if _ball_count(L.dimension, r, L.volume) > THETA_MAX_POINTS:
        raise DimensionTooLarge("theta series would enumerate too many points")
    return _kernels.gauss_sum(L.r, np.zeros(L.dimension), r * r, s * s)


def _linf_theta(L, sigma):
    g = vnr(L, sigma)
    theta = theta_series(L, 1.0 / (2 * math.pi * sigma ** 2))
    return (g / (2 * math.pi)) ** (L.dimension / 2) * theta - 1.0, theta


def linf_flatness(L, sigma, method="dual_theta"):
    """L-infinity flatness factor.

    ``method="theta"`` uses ``(gamma/2pi)^{n/2} Theta_L(1/(2 pi sigma^2)) - 1``;
    ``method="dual_theta"`` sums ``Theta_{L*}(2 pi sigma^2) - 1`` over the
    nonzero dual points, which avoids cancellation when the factor is tiny.
    """
    _check_sigma(sigma)
    g = vnr(L, sigma)
    if method == "theta":
        value, theta = _linf_theta(L, sigma)
    elif method == "dual_theta":
        value = dual_theta_excess(L, sigma)
        theta = 1.0 + value
    else:
        raise MethodUnsupported(f"unknown L-infinity method {method!r}")
    return FlatnessReport("linf", sigma, g, max(value, 0.0), 0.0, method, 0, theta)


def linf_value(L, sigma):
    """L-infinity flatness through whichever theta form is cheaper and stable at ``sigma``."""
    if vnr(L, sigma) >= 2 * math.pi:
        return max(_linf_theta(L, sigma)[0], 0.0)
    return dual_theta_excess(L, sigma)


@dataclass(frozen=True)
class ZnFlatness:
    value: float
    one_dim: float
    bound: float


def zn_scaled_flatness(alpha, sigma, n):
    """Exact ``eps`` of the scaled cube lattice ``(alpha Z)^n`` from the 1D dual theta."""
    _check_sigma(sigma)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    e1 = _dual_excess_1d(alpha, sigma)
    bound = 4.0 * math.exp(-2 * math.pi ** 2 * sigma ** 2 / alpha ** 2)
    return ZnFlatness(math.expm1(n * math.log1p(e1)), e1, bound)


# ---------------------------------------------------------------------------
# L1


def _l1_quadrature_1d(L, sigma):
    a = float(L.basis[0, 0])

    def g(t):
        return float(abs(folded_deviation(L, sigma, np.array([a * t]))))

    grid = np.linspace(0.0, 1.0, 4097)
    dev = folded_deviation(L, sigma, (a * grid)[:, None])
    cuts = [0.0]
    for i in np.nonzero(np.sign(dev[:-1]) * np.sign(dev[1:]) < 0)[0]:
        cuts.append(optimize.brentq(
            lambda t: float(folded_deviation(L, sigma, np.array([a * t]))), grid[i], grid[i + 1],
            xtol=1e-15))
    cuts.append(1.0)
    total = err = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            try:
                v, e = integrate.quad(g, lo, hi, epsabs=1e-13, epsrel=1e-10, limit=500)
            except integrate.IntegrationWarning as exc:
                raise QuadratureFailure(str(exc)) from exc
            total += v
            err += e
    return total, err


def _gauss_legendre_cube(n, cells, order=5):
    x, w = legendre.leggauss(order)
    x = (x + 1) / 2
    w = w / 2
    starts = np.arange(cells) / cells
    nodes = (starts[:, None] + x[None, :] / cells).ravel()
    weights = np.tile(w / cells, cells)
    grids = np.meshgrid(*([nodes] * n), indexing="ij")
    wgrid = np.ones_like(grids[0])
    for wg in np.meshgrid(*([weights] * n), indexing="ij"):
        wgrid = wgrid * wg
    return np.stack([g.ravel() for g in grids], -1), wgrid.ravel()


def _l1_quadrature_nd(L, sigma, max_nodes=4_000_000):
    n = L.dimension
    prev = val = None
    diff = math.inf
    cells = 4
    while (5 * cells) ** n <= max_nodes:
        T, W = _gauss_legendre_cube(n, cells)
        val = float(W @ np.abs(folded_deviation(L, sigma, T @ L.basis.T)))
        if prev is not None:
            diff = abs(val - prev)
            if diff <= 1e-10 + 1e-7 * val:
                break
        prev = val
        cells *= 2
    if val is None:
        raise QuadratureFailure("node budget too small for a single pass")
    return val, diff


def l1_flatness(L, sigma, method="quadrature", budget=100_000, rng=None):
    """L1 flatness factor ``int_R |f_{sigma,L} - 1/V|``.

    Quadrature reports its error estimate in ``ci_halfwidth``; Monte Carlo
    draws ``budget`` uniform points of the fundamental parallelepiped.
    """
    _check_sigma(sigma)
    g = vnr(L, sigma)
    n = L.dimension
    if method == "quadrature":
        if n > 3:
            raise MethodUnsupported("L1 quadrature is available for n <= 3 only")
        value, err = _l1_quadrature_1d(L, sigma) if n == 1 else _l1_quadrature_nd(L, sigma)
        return FlatnessReport("l1", sigma, g, min(value, 2.0), err, "quadrature", 0)
    if method != "monte_carlo":
        raise MethodUnsupported(f"unknown L1 method {method!r}")

    def draw(sub, m):
        return np.abs(folded_deviation(L, sigma, sub.random((m, n)) @ L.basis.T))

    est = mean_estimate(map_chunks(draw, budget, as_generator(rng)))
    return FlatnessReport("l1", sigma, g, est.value, est.ci, "monte_carlo", est.samples)


# ---------------------------------------------------------------------------
# KL and capacities


def _kl_quadrature(L, sigma, tol=1e-12, max_nodes=2_000_000):
    n = L.dimension
    prev = None
    m = 64
    while m ** n <= max_nodes:
        axes = [np.arange(m) / m] * n
        T = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
        lr = folded_log_ratio(L, sigma, T @ L.basis.T)
        val = float(np.mean(np.exp(lr) * lr))
        if prev is not None and abs(val - prev) <= tol * max(1.0, abs(val)):
            return val, abs(val - prev)
        prev = val
        m *= 2
    raise QuadratureFailure("periodic trapezoid rule did not converge")


def kl_flatness(L, sigma, samples=100_000, rng=None, method="monte_carlo"):
    """KL flatness factor, i.e. the capacity ``C(L, sigma^2)`` of the mod-L channel."""
    _check_sigma(sigma)
    g = vnr(L, sigma)
    n = L.dimension
    if method == "quadrature":
        if n > 2:
            raise MethodUnsupported("KL quadrature is available for n <= 2 only")
        value, err = _kl_quadrature(L, sigma)
        return FlatnessReport("kl", sigma, g, max(value, 0.0), err, "quadrature", 0)
    if method != "monte_carlo":
        raise MethodUnsupported(f"unknown KL method {method!r}")
    if samples < 1000:
        raise ValueError("KL estimation needs at least 1000 samples")

    def draw(sub, m):
        return folded_log_ratio(L, sigma, sigma * sub.standard_normal((m, n)))

    est = mean_estimate(map_chunks(draw, samples, as_generator(rng)))
    return FlatnessReport("kl", sigma, g, est.value, est.ci, "monte_carlo", est.samples)


mod_lattice_capacity = kl_flatness


@dataclass(frozen=True)
class QuotientCapacity:
    """``C(fine/coarse, sigma^2)`` by two estimators."""

    chain: Estimate    # C(coarse) - C(fine), independent streams
    direct: Estimate   # paired divergence form on shared noise draws
    index: int


def quotient_capacity(fine, coarse, sigma, samples=100_000, rng=None):
    _check_sigma(sigma)
    q = quotient(fine, coarse, max_index=np.iinfo(np.int64).max)
    n = fine.dimension
    if q.index == 1:
        zero = Estimate(0.0, 0.0, samples)
        return QuotientCapacity(zero, zero, 1)
    rng = as_generator(rng)
    s_coarse, s_fine, s_pair = rng.spawn(3)
    c_coarse = kl_flatness(coarse, sigma, samples, s_coarse)
    c_fine = kl_flatness(fine, sigma, samples, s_fine)
    chain = Estimate(c_coarse.value - c_fine.value,
                     math.hypot(c_coarse.ci_halfwidth, c_fine.ci_halfwidth), samples)

    def draw(sub, m):
        w = sigma * sub.standard_normal((m, n))
        return folded_log_ratio(coarse, sigma, w) - folded_log_ratio(fine, sigma, w)

    direct = mean_estimate(map_chunks(draw, samples, s_pair))
    return QuotientCapacity(chain, direct, q.index)


# ---------------------------------------------------------------------------
# smoothing parameter


def smoothing_parameter(L, eps_target, metric="linf", samples=100_000, seed=0):
    """Smallest ``sigma`` whose flatness factor is ``eps_target``.

    The flatness factors decrease in ``sigma``, so a bracket is grown
    geometrically around ``V^{1/n} / sqrt(2 pi)`` and refined by Brent's
    method in ``log sigma``.  Monte-Carlo L1 evaluations reuse one seed so the
    objective is a deterministic, monotone-in-trend function.
    """
    if not eps_target > 0:
        raise ValueError("eps_target must be positive")
    n = L.dimension
    if metric == "linf":
        def eps(s):
            return linf_value(L, s)
    elif metric == "l1":
        if eps_target >= 2.0:
            raise NonBracketed("L1 flatness never reaches 2")
        method = "quadrature" if n <= 3 else "monte_carlo"

        def eps(s):
            return l1_flatness(L, s, method, samples, np.random.default_rng(seed)).value
    else:
        raise MethodUnsupported(f"unknown metric {metric!r}")

    def h(log_s):
        e = eps(math.exp(log_s))
        return (math.log(e) if e > 0 else -800.0) - math.log(eps_target)

    s0 = math.log(L.volume ** (1.0 / n) / math.sqrt(2 * math.pi))
    lo = hi = s0
    for _ in range(40):
        if h(lo) > 0:
            break
        lo -= math.log(2)
    else:
        raise NonBracketed("target not reached for small sigma")
    for _ in range(40):
        if h(hi) < 0:
            break
        hi += math.log(2)
    else:
        raise NonBracketed("target not reached for large sigma")
    root = optimize.brentq(h, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
    return math.exp(root)
