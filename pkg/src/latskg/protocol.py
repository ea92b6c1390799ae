"""Key generation from a correlated Gaussian source with one public message.

Alice randomly rounds her dithered observation onto the fine lattice L1,
publishes the Voronoi residue ``s`` of that point modulo L2 and keeps the
coarser part, reduced modulo L3, as the key.  Bob adds his scaled
observation to the dither, subtracts ``s`` and decodes onto L2.

Coset arithmetic is carried out on integer coordinates so keys and
consistency checks are exact.
"""
from dataclasses import dataclass, field
from functools import lru_cache
import json
import math
import warnings

import numpy as np

from .errors import (ConfigError, EnumerationTooLarge, InvalidPublicMessage, NotDegradable,
                     NotPSD)
from .construction import chain_rates
from .estimates import Estimate, as_generator
from .flatness import l1_flatness
from .gaussian import log_periodic_sum, randomized_round
from .lattice import (MEMBERSHIP_TOL, MAX_INDEX, _snapped_floor, in_voronoi, integer_lattice,
                      nearest_coords, quotient, voronoi_relevant_vectors, vnr)

MAX_POSTERIOR_GRID = 250_000


# ---------------------------------------------------------------------------
# source model


@dataclass(frozen=True)
class GaussianSourceModel:
    sigma_x: float
    sigma_y: float
    sigma_z: float
    rho_xy: float
    rho_xz: float
    rho_yz: float

    @property
    def sigma_1(self):
        return self.sigma_x * math.sqrt(1 - self.rho_xy ** 2)

    @property
    def sigma_2(self):
        return self.sigma_x * math.sqrt(1 - self.rho_xz ** 2)

    @property
    def sigma_hat_y(self):
        return self.rho_xy * self.sigma_x

    @property
    def sigma_hat_z(self):
        return self.rho_xz * self.sigma_x

    @property
    def y_scale(self):
        """Factor turning ``y`` into Bob's estimate of ``x``."""
        return self.sigma_hat_y / self.sigma_y

    @property
    def z_scale(self):
        return self.sigma_hat_z / self.sigma_z

    @property
    def correlation(self):
        a, b, c = self.rho_xy, self.rho_xz, self.rho_yz
        return np.array([[1.0, a, b], [a, 1.0, c], [b, c, 1.0]])

    @property
    def covariance(self):
        s = np.array([self.sigma_x, self.sigma_y, self.sigma_z])
        return self.correlation * np.outer(s, s)


def make_source(sigma_x, sigma_y, sigma_z, rho_xy, rho_xz, rho_yz=None):
    """Validated source model; ``rho_yz`` defaults to the degraded value ``rho_xz / rho_xy``."""
    for v in (sigma_x, sigma_y, sigma_z):
        if not (math.isfinite(v) and v > 0):
            raise ConfigError("standard deviations must be positive")
    for r in (rho_xy, rho_xz) + (() if rho_yz is None else (rho_yz,)):
        if not abs(r) < 1:
            raise ConfigError("correlations must lie in (-1, 1)")
    if abs(rho_xz) >= abs(rho_xy):
        raise NotDegradable("need |rho_xz| < |rho_xy| so that Eve is noisier than Bob")
    degraded = rho_xz / rho_xy
    if rho_yz is None:
        rho_yz = degraded
    elif abs(rho_yz - degraded) > 1e-12:
        warnings.warn("rho_yz differs from the degraded value; bounds use the degraded surrogate",
                      UserWarning, stacklevel=2)
    model = GaussianSourceModel(float(sigma_x), float(sigma_y), float(sigma_z),
                                float(rho_xy), float(rho_xz), float(rho_yz))
    if np.linalg.det(model.correlation) < -1e-12 or np.linalg.eigvalsh(model.correlation)[0] < -1e-12:
        raise NotPSD("correlation matrix is not positive semidefinite")
    return model


def degraded_surrogate(model):
    """Same marginals and ``rho_xz``, with ``rho_yz`` set so that X - Y - Z is a Markov chain."""
    return GaussianSourceModel(model.sigma_x, model.sigma_y, model.sigma_z,
                               model.rho_xy, model.rho_xz, model.rho_xz / model.rho_xy)


def sample_source(model, n, rng, size=None):
    """i.i.d. draws of ``(x, y, z)``, each of shape ``(n,)`` or ``(size, n)``."""
    cov = model.covariance
    try:
        root = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        root = v * np.sqrt(np.clip(w, 0, None))
    shape = (n,) if size is None else (int(size), n)
    g = rng.standard_normal(shape + (3,))
    xyz = g @ root.T
    return xyz[..., 0], xyz[..., 1], xyz[..., 2]


# ---------------------------------------------------------------------------
# quantizer and rates


@dataclass(frozen=True)
class QuantizerConfig:
    sigma_q: float
    source: GaussianSourceModel
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.sigma_q) and self.sigma_q > 0):
            raise ConfigError("sigma_q must be positive")
        if not self.sigma_tilde_1 < self.sigma_tilde_2 <= self.sigma_tilde_x * (1 + 1e-15):
            raise ConfigError("effective noise levels are out of order")

    @property
    def sigma_tilde_1(self):
        return math.hypot(self.source.sigma_1, self.sigma_q)

    @property
    def sigma_tilde_2(self):
        return math.hypot(self.source.sigma_2, self.sigma_q)

    @property
    def sigma_tilde_x(self):
        return math.hypot(self.source.sigma_x, self.sigma_q)


def dither(chain, rng, size=None):
    """Uniform draws from the fundamental parallelepiped of L1."""
    L1 = chain.lattice1
    shape = (L1.dimension,) if size is None else (int(size), L1.dimension)
    return rng.random(shape) @ L1.basis.T


def _check_order(sigma_1, sigma_2):
    if not 0 < sigma_1 <= sigma_2:
        raise ConfigError("need 0 < sigma_1 <= sigma_2")


def secret_key_capacity(sigma_1, sigma_2):
    _check_order(sigma_1, sigma_2)
    return math.log(sigma_2 / sigma_1)


def tradeoff_bound(sigma_1, sigma_2, r_p):
    """Largest key rate with public rate ``r_p`` (nats per dimension)."""
    _check_order(sigma_1, sigma_2)
    if r_p < 0:
        raise ConfigError("public rate must be non-negative")
    if math.isinf(r_p):
        return secret_key_capacity(sigma_1, sigma_2)
    e = math.exp(-2 * r_p)
    return 0.5 * math.log(e + (sigma_2 / sigma_1) ** 2 * -math.expm1(-2 * r_p))


def achievable_bound(sigma_1, sigma_2, sigma_q):
    if not sigma_q > 0:
        raise ConfigError("sigma_q must be positive")
    _check_order(sigma_1, sigma_2)
    return 0.5 * math.log((sigma_2 ** 2 + sigma_q ** 2) / (sigma_1 ** 2 + sigma_q ** 2))


def matched_rate(sigma_1, sigma_q):
    """Public rate at which quantizing with ``sigma_q`` meets the trade-off curve."""
    return 0.5 * math.log1p((sigma_1 / sigma_q) ** 2)


def sigma_q_for_rate(sigma_1, r_p):
    """Inverse of :func:`matched_rate`."""
    if r_p <= 0:
        return math.inf
    if math.isinf(r_p):
        return 0.0
    return sigma_1 / math.sqrt(math.expm1(2 * r_p))


@dataclass(frozen=True)
class RateReport:
    r_p: float
    r_k: float
    c_s: float
    r_bar_k: float
    achievable_bound: float


def rate_report(chain, cfg, sigma_2=None):
    """Rates of ``chain`` against the source limits; ``sigma_2`` may be a lower bound."""
    s1 = cfg.source.sigma_1
    s2 = cfg.source.sigma_2 if sigma_2 is None else float(sigma_2)
    r_p, r_k = chain_rates(chain)
    return RateReport(r_p, r_k, secret_key_capacity(s1, s2), tradeoff_bound(s1, s2, r_p),
                      achievable_bound(s1, s2, cfg.sigma_q))


# ---------------------------------------------------------------------------
# the protocol round


@dataclass(frozen=True, eq=False)
class ChainGeometry:
    """Integer relations between consecutive members of a nested chain."""

    q12: object
    q23: object
    q13: object
    relevant2: np.ndarray

    @property
    def key_size(self):
        return self.q23.index


@lru_cache(maxsize=32)
def geometry(chain):
    L1, L2, L3 = chain.lattices
    big = np.iinfo(np.int64).max
    return ChainGeometry(quotient(L1, L2, big), quotient(L2, L3, big), quotient(L1, L3, big),
                         voronoi_relevant_vectors(L2))


def _reduce_coords(lower, upper_rel, z):
    """Reduce ``lower``-lattice coordinates ``z`` into the parallelepiped of ``upper``.

    ``upper_rel`` is the integer matrix expressing the upper basis in lower
    coordinates; the floor is taken in the upper lattice's own frame.
    """
    t = np.linalg.solve(upper_rel.astype(np.float64), z.astype(np.float64).T).T
    return z - _snapped_floor(t).astype(np.int64) @ upper_rel.T


def alice_encode(chain, cfg, x, u, rng):
    """Alice's quantised point, public message and key: ``(x_q, s, k)``."""
    L1, L2, L3 = chain.lattices
    g = geometry(chain)
    x_q = randomized_round(L1, cfg.sigma_q, L1._check(x) + L1._check(u), rng)
    z1 = L1.coords(x_q)
    z2 = nearest_coords(L2, x_q)
    s = L1.point(z1 - z2 @ g.q12.relation.T)
    k = L2.point(_reduce_coords(L2, g.q23.relation, z2))
    return x_q, s, k


def _validate_public(chain, s):
    L1, L2, _ = chain.lattices
    ok = L1.contains(s) & np.all(nearest_coords(L2, s) == 0, axis=-1)
    if not np.all(ok):
        raise InvalidPublicMessage("public message is not a Voronoi representative of L1 / L2")


def bob_decode(chain, model, cfg, y, u, s):
    """Bob's reconstruction ``(x_hat_q, k_hat)`` from ``y``, the dither and ``s``."""
    L1, L2, _ = chain.lattices
    s = L1._check(s)
    _validate_public(chain, s)
    g = geometry(chain)
    x_hat = s + L2.point(nearest_coords(L2, model.y_scale * L1._check(y) + u - s))
    z2 = nearest_coords(L2, x_hat)
    return x_hat, L2.point(_reduce_coords(L2, g.q23.relation, z2))


def recombine(chain, s, k):
    """``s + k`` reduced into the parallelepiped of L3, an L1 point."""
    L1, _, L3 = chain.lattices
    g = geometry(chain)
    z = L1.coords(s + k)
    return L1.point(_reduce_coords(L1, g.q13.relation, z))


def split(chain, x_bar):
    """Inverse of :func:`recombine` on reduced L1 points."""
    L1, L2, _ = chain.lattices
    g = geometry(chain)
    z2 = nearest_coords(L2, x_bar)
    s = x_bar - L2.point(z2)
    return s, L2.point(_reduce_coords(L2, g.q23.relation, z2))


_VECTOR_FIELDS = ("u", "x", "y", "z", "x_q", "x_bar_q", "s", "k", "k_hat", "x_hat_q")


@dataclass(frozen=True)
class ProtocolTranscript:
    u: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    x_q: np.ndarray
    x_bar_q: np.ndarray
    s: np.ndarray
    k: np.ndarray
    k_hat: np.ndarray
    x_hat_q: np.ndarray
    success: bool
    reconciled: bool

    def to_json(self):
        d = {f: [float(v) for v in getattr(self, f)] for f in _VECTOR_FIELDS}
        d["success"] = bool(self.success)
        d["reconciled"] = bool(self.reconciled)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        vec = {f: np.array(d[f], dtype=np.float64) for f in _VECTOR_FIELDS}
        return cls(success=bool(d["success"]), reconciled=bool(d["reconciled"]), **vec)


def write_jsonl(transcripts, fh):
    for t in transcripts:
        fh.write(t.to_json() + "\n")


def read_jsonl(fh):
    return [ProtocolTranscript.from_json(line) for line in fh if line.strip()]


@dataclass(frozen=True, eq=False)
class RoundBatch:
    """Arrays for a batch of independent rounds, one row per round."""

    u: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    x_q: np.ndarray
    x_bar_q: np.ndarray
    s: np.ndarray
    k: np.ndarray
    k_hat: np.ndarray
    x_hat_q: np.ndarray
    key_index: np.ndarray
    key_hat_index: np.ndarray
    error_coords: np.ndarray = field(repr=False)  # Q_L2(y_hat + u - x_q) in L2 coordinates
    in_cell: np.ndarray = field(repr=False)       # y_hat + u - x_q inside the Voronoi cell of L2

    @property
    def success(self):
        return self.key_index == self.key_hat_index

    @property
    def reconciled(self):
        return np.all(self.error_coords == 0, axis=1) & np.all(
            np.abs(self.x_hat_q - self.x_q) <= MEMBERSHIP_TOL * (1 + np.abs(self.x_q)), axis=1)

    def __len__(self):
        return len(self.u)

    def transcripts(self):
        for i in range(len(self)):
            vec = {f: getattr(self, f)[i] for f in _VECTOR_FIELDS}
            yield ProtocolTranscript(success=bool(self.success[i]),
                                     reconciled=bool(self.reconciled[i]), **vec)


def run_rounds(chain, cfg, rounds, rng):
    """Simulate ``rounds`` independent protocol rounds."""
    model = cfg.source
    L1, L2, L3 = chain.lattices
    g = geometry(chain)
    n = chain.n
    x, y, z = sample_source(model, n, rng, size=rounds)
    u = dither(chain, rng, size=rounds)
    x_q, s, k = alice_encode(chain, cfg, x, u, rng)
    x_hat, k_hat = bob_decode(chain, model, cfg, y, u, s)
    x_bar = L1.point(_reduce_coords(L1, g.q13.relation, L1.coords(x_q)))
    err = model.y_scale * y + u - x_q
    return RoundBatch(u, x, y, z, x_q, x_bar, s, k, k_hat, x_hat,
                      g.q23.index_of(k), g.q23.index_of(k_hat),
                      nearest_coords(L2, err), in_voronoi(g.relevant2, err))


# ---------------------------------------------------------------------------
# the eavesdropper's view


def posterior_grid_size(chain, cfg):
    L3 = chain.lattice3
    m = [int(math.ceil(1.28 * np.linalg.norm(b) / cfg.sigma_q)) + 1 for b in L3.basis.T]
    return m


@lru_cache(maxsize=8)
def _fold_table(chain, sigma_q, m):
    """Grid over the L3 parallelepiped and, per grid point, the L1/L3 coset law of rounding."""
    L1, _, L3 = chain.lattices
    g = geometry(chain)
    axes = [np.arange(mi) / mi for mi in m]
    frac = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(m))
    Y = frac @ L3.basis.T
    # the rounding mass on a coset t + L3 is the L3-periodic Gaussian at t - y,
    # normalised over all cosets
    reps = L1.point(g.q13.canonical_coords())
    F = np.empty((len(Y), len(reps)))
    step = max(1, 1_000_000 // len(reps))
    for a in range(0, len(Y), step):
        D = reps[None, :, :] - Y[a:a + step, None, :]
        lw = log_periodic_sum(L3, sigma_q, D.reshape(-1, L1.dimension)).reshape(D.shape[:2])
        w = np.exp(lw - lw.max(axis=1, keepdims=True))
        F[a:a + step] = w / w.sum(axis=1, keepdims=True)
    return Y, F


def eve_key_posterior(chain, cfg, sigma_2, z, u):
    """Eve's law of ``x_q`` modulo L3 given ``z`` and the dither, as a pmf over L1/L3 cosets.

    The rounding law is averaged over the residual Gaussian of width
    ``sigma_2`` with a periodic trapezoid rule on the L3 cell.  Cosets are
    numbered as in ``quotient(L1, L3)``.  A batch of ``(z, u)`` gives one pmf
    per row.
    """
    L1, _, L3 = chain.lattices
    g = geometry(chain)
    if g.q13.index > MAX_INDEX:
        raise EnumerationTooLarge(f"{g.q13.index} cosets exceed the limit {MAX_INDEX}")
    if g.q13.index == 1:
        return np.ones(np.shape(z)[:-1] + (1,))
    m = tuple(posterior_grid_size(chain, cfg))
    if math.prod(m) > MAX_POSTERIOR_GRID:
        raise EnumerationTooLarge(f"posterior grid of {math.prod(m)} points is too large")
    Y, F = _fold_table(chain, float(cfg.sigma_q), m)
    c = np.atleast_2d(cfg.source.z_scale * L1._check(z) + u)
    out = np.empty((len(c), F.shape[1]))
    for i, ci in enumerate(c):
        lw = _log_weights(L3, sigma_2, m, Y, ci)
        w = np.exp(lw - lw.max())
        p = w @ F
        out[i] = p / p.sum()
    return out[0] if np.ndim(z) == 1 else out


def _log_weights(L3, sigma, m, Y, c):
    """Log of the L3-periodic Gaussian at ``Y - c``; separable when L3 is diagonal."""
    if not L3.is_diagonal:
        return log_periodic_sum(L3, sigma, Y - c)
    d = np.diag(L3.basis)
    lw = np.zeros(m)
    for axis, (mi, di) in enumerate(zip(m, d)):
        view = [1] * len(m)
        view[axis] = mi
        one = integer_lattice(1, abs(di))
        lw = lw + log_periodic_sum(one, sigma, (di * np.arange(mi) / mi - c[axis])[:, None]).reshape(view)
    return lw.reshape(-1)


@lru_cache(maxsize=8)
def coset_split(chain):
    """For each L1/L3 coset, its (L1/L2, L2/L3) pair of indices."""
    L1, L2, _ = chain.lattices
    g = geometry(chain)
    reps = L1.point(g.q13.canonical_coords())
    z2 = nearest_coords(L2, reps)
    return g.q12.index_of(reps - L2.point(z2)), g.q23.index_of_coords(z2)


def conditional_key_distance(chain, posterior, key_pmf=None):
    """``sum_{s,k} |p(s,k) - p_K(k) p(s)|`` for a pmf over L1/L3 cosets.

    ``key_pmf`` defaults to the uniform key distribution.
    """
    g = geometry(chain)
    s_idx, k_idx = coset_split(chain)
    P = np.atleast_2d(posterior)
    joint = np.zeros((len(P), g.q12.index, g.q23.index))
    np.add.at(joint, (slice(None), s_idx, k_idx), P)
    pk = np.full(g.q23.index, 1.0 / g.q23.index) if key_pmf is None else np.asarray(key_pmf)
    ps = joint.sum(axis=2)
    d = np.abs(joint - ps[:, :, None] * pk[None, None, :]).sum(axis=(1, 2))
    return d[0] if np.ndim(posterior) == 1 else d


def distance_to_uniform(posterior):
    P = np.atleast_2d(posterior)
    d = np.abs(P - 1.0 / P.shape[1]).sum(axis=1)
    return d[0] if np.ndim(posterior) == 1 else d


def leakage_bound(d, key_size):
    """Mutual-information bound ``d log(|K| / d)`` from an average conditional distance."""
    if d <= 0:
        return 0.0
    return float(d * math.log(key_size / d))



@dataclass(frozen=True)
class FlatnessRoles:
    """What each member of the chain has to do at the configured noise levels."""

    eps_l1_fine: Estimate            # L1 at sigma_q: dithered rounding looks continuous
    vnr_middle: float                # vnr(L2, sigma_tilde_1)
    awgn_margin_met: bool            # vnr_middle > 2 pi e
    eps_l1_coarse: Estimate          # L3 at sigma_tilde_2: the key extractor

    @property
    def budget(self):
        """Distance budget ``2 eps(L1) + 2 eps(L3)`` and its half-width."""
        return (2 * (self.eps_l1_fine.value + self.eps_l1_coarse.value),
                2 * (self.eps_l1_fine.ci + self.eps_l1_coarse.ci))


def flatness_roles(chain, cfg, samples=100_000, rng=None, sigma_2=None):
    rng = as_generator(rng)
    r1, r3 = rng.spawn(2)
    s2 = cfg.sigma_tilde_2 if sigma_2 is None else math.hypot(sigma_2, cfg.sigma_q)

    def l1(L, s, sub):
        method = "quadrature" if L.dimension <= 2 else "monte_carlo"
        rep = l1_flatness(L, s, method=method, budget=samples, rng=sub)
        return Estimate(rep.value, rep.ci_halfwidth, rep.samples)

    v = vnr(chain.lattice2, cfg.sigma_tilde_1)
    return FlatnessRoles(l1(chain.lattice1, cfg.sigma_q, r1), v, v > 2 * math.pi * math.e,
                         l1(chain.lattice3, s2, r3))
