"""Construction-A lattices and the nested chain L3 in L2 in L1.

``L_i = alpha (p Z^n + C_i)`` where ``C_i`` is spanned by the first ``k_i``
columns of one generator matrix ``G`` over ``F_p``, so the codes and hence the
lattices are nested by construction.
"""
from dataclasses import dataclass, field
import json
import math
import warnings

import numpy as np
from scipy import special

from .errors import ConstructionFailed, DegenerateChain, DimensionTooLarge, RankDeficientCode
from .lattice import CVP_MAX_DIM, Lattice, quotient

MAX_TRIES = 100


def is_prime(m):
    if m < 2:
        return False
    if m % 2 == 0:
        return m == 2
    f = 3
    while f * f <= m:
        if m % f == 0:
            return False
        f += 2
    return True


def choose_prime(n, override=None):
    """Smallest prime in ``(n^{3/2}, 2 n^{3/2}]`` and ``xi = p / n^{3/2}``."""
    if n < 1:
        raise ValueError("n must be positive")
    scale = n ** 1.5
    if override is not None:
        if not is_prime(int(override)):
            raise ValueError(f"{override} is not prime")
        return int(override), int(override) / scale
    p = int(math.floor(scale)) + 1
    while not is_prime(p):
        p += 1
    return p, p / scale


def unit_ball_volume(n):
    return math.exp(0.5 * n * math.log(math.pi) - special.gammaln(0.5 * n + 1))


def code_dimensions(n, p, targets):
    """Code dimensions for targets ``P1 < P2 < P3``; warns when ``k1 == k3``."""
    P = [float(t) for t in targets]
    if len(P) != 3 or not 0 < P[0] < P[1] < P[2]:
        raise ValueError("targets must satisfy 0 < P1 < P2 < P3")
    base = math.log(4.0 / unit_ball_volume(n) ** (2.0 / n))
    ks = []
    for t in P:
        k = math.floor(n / (2 * math.log(p)) * (base + math.log(1.0 / t)))
        ks.append(int(min(max(k, 0), n)))
    if ks[0] == ks[2]:
        warnings.warn(f"degenerate chain: k1 = k3 = {ks[0]}", DegenerateChain, stacklevel=2)
    return tuple(ks)


def _column_echelon_mod_p(G, p):
    """Column-reduce ``G`` over ``F_p``; return (reduced matrix, pivot rows)."""
    A = np.array(G, dtype=np.int64) % p
    n, k = A.shape
    pivots = []
    col = 0
    for row in range(n):
        if col == k:
            break
        nz = [c for c in range(col, k) if A[row, c] != 0]
        if not nz:
            continue
        c = nz[0]
        A[:, [col, c]] = A[:, [c, col]]
        A[:, col] = (A[:, col] * pow(int(A[row, col]), -1, p)) % p
        for c2 in range(k):
            if c2 != col and A[row, c2] != 0:
                A[:, c2] = (A[:, c2] - A[row, c2] * A[:, col]) % p
        pivots.append(row)
        col += 1
    return A, pivots


def rank_mod_p(G, p):
    G = np.asarray(G)
    if G.size == 0:
        return 0
    return len(_column_echelon_mod_p(G, p)[1])


def construction_a_basis(G, p):
    """Integer basis of ``p Z^n + C`` with entries centred in ``(-p/2, p/2]``."""
    G = np.asarray(G, dtype=np.int64)
    n = G.shape[0]
    k = G.shape[1] if G.ndim == 2 else 0
    if k == 0:
        return p * np.eye(n, dtype=np.int64)
    A, pivots = _column_echelon_mod_p(G, p)
    if len(pivots) < k:
        raise RankDeficientCode(f"generator has rank {len(pivots)} < {k} over F_{p}")
    A = np.where(A > p // 2, A - p, A)
    others = [j for j in range(n) if j not in pivots]
    cols = [A[:, c] for c in range(k)] + [p * np.eye(n, dtype=np.int64)[:, j] for j in others]
    return lll_reduce(np.stack(cols, axis=1))


def lll_reduce(B, delta=0.99):
    """LLL-reduce the integer columns of ``B`` (small n only; same lattice, shorter basis).

    Only used on bases we build ourselves, so enumeration radii stay small.
    """
    B = np.array(B, dtype=np.int64)
    n = B.shape[1]

    def gram_schmidt(M):
        Mf = M.astype(np.float64)
        Q = np.zeros_like(Mf)
        mu = np.zeros((n, n))
        for i in range(n):
            v = Mf[:, i].copy()
            for j in range(i):
                mu[i, j] = Mf[:, i] @ Q[:, j] / (Q[:, j] @ Q[:, j])
                v -= mu[i, j] * Q[:, j]
            Q[:, i] = v
        return Q, mu

    Q, mu = gram_schmidt(B)
    k = 1
    while k < n:
        for j in range(k - 1, -1, -1):
            q = int(round(mu[k, j]))
            if q:
                B[:, k] -= q * B[:, j]
                Q, mu = gram_schmidt(B)
        if Q[:, k] @ Q[:, k] >= (delta - mu[k, k - 1] ** 2) * (Q[:, k - 1] @ Q[:, k - 1]):
            k += 1
        else:
            B[:, [k - 1, k]] = B[:, [k, k - 1]]
            Q, mu = gram_schmidt(B)
            k = max(k - 1, 1)
    return B


def construction_a(G, p, alpha=1.0):
    """The lattice ``alpha (p Z^n + C)`` for the code spanned by the columns of ``G``."""
    return Lattice(alpha * construction_a_basis(G, p).astype(np.float64))


def random_generator(n, k, p, rng, max_tries=MAX_TRIES):
    """Uniform ``n x k`` generator over ``F_p`` of full column rank."""
    for _ in range(max_tries):
        G = rng.integers(0, p, size=(n, k), dtype=np.int64)
        if rank_mod_p(G, p) == k:
            return G
    raise ConstructionFailed(f"no full-rank {n}x{k} generator over F_{p} in {max_tries} tries")


@dataclass(frozen=True, eq=False)
class NestedChain:
    n: int
    p: int
    xi: float
    alpha: float
    k: tuple
    generator: np.ndarray
    targets: tuple
    lattices: tuple = field(repr=False)

    @property
    def lattice1(self):
        return self.lattices[0]

    @property
    def lattice2(self):
        return self.lattices[1]

    @property
    def lattice3(self):
        return self.lattices[2]

    @property
    def degenerate(self):
        return self.k[0] == self.k[2]

    def expected_volume(self, i):
        return self.alpha ** self.n * float(self.p) ** (self.n - self.k[i])

    def to_dict(self):
        return {
            "n": self.n,
            "p": self.p,
            "xi": self.xi,
            "alpha": self.alpha,
            "k": list(self.k),
            "generator": self.generator.tolist(),
            "targets": list(self.targets),
        }


def chain_from_generator(n, p, k, generator, targets, alpha=None, xi=None):
    """Assemble and verify a chain from an explicit ``n x k1`` generator."""
    if n > CVP_MAX_DIM:
        raise DimensionTooLarge(f"chains are limited to n <= {CVP_MAX_DIM}")
    k = tuple(int(v) for v in k)
    if not n >= k[0] >= k[1] >= k[2] >= 0:
        raise ValueError("need n >= k1 >= k2 >= k3 >= 0")
    G = np.asarray(generator, dtype=np.int64).reshape(n, k[0])
    if rank_mod_p(G, p) != k[0]:
        raise RankDeficientCode("generator columns are not independent over F_p")
    alpha = 2 * math.sqrt(n) / p if alpha is None else float(alpha)
    xi = p / n ** 1.5 if xi is None else float(xi)
    lattices = tuple(construction_a(G[:, :ki], p, alpha) for ki in k)
    chain = NestedChain(n, int(p), xi, alpha, k, G, tuple(float(t) for t in targets), lattices)
    for i in range(3):
        vol = chain.expected_volume(i)
        if abs(lattices[i].volume - vol) > 1e-9 * vol:
            raise ConstructionFailed(f"volume of lattice {i + 1} is off")
    quotient(lattices[0], lattices[1], max_index=np.iinfo(np.int64).max)
    quotient(lattices[1], lattices[2], max_index=np.iinfo(np.int64).max)
    return chain


def build_chain(n, targets, rng, p=None, k=None):
    """Random Construction-A chain for volume targets ``P1 < P2 < P3``.

    ``p`` overrides the prime; ``k`` overrides the code dimensions.
    """
    p, xi = choose_prime(n, p)
    if k is None:
        with warnings.catch_warnings():
            warnings.simplefilter("always", DegenerateChain)
            k = code_dimensions(n, p, targets)
    G = random_generator(n, k[0], p, rng)
    return chain_from_generator(n, p, k, G, targets, xi=xi)


def chain_rates(chain):
    """Public rate ``R_P`` and key rate ``R_K`` in nats per dimension."""
    k1, k2, k3 = chain.k
    lp = math.log(chain.p)
    return (k1 - k2) * lp / chain.n, (k2 - k3) * lp / chain.n


def chain_to_json(chain):
    return json.dumps(chain.to_dict(), sort_keys=True)


def chain_from_json(text):
    d = json.loads(text)
    return chain_from_generator(d["n"], d["p"], d["k"], np.array(d["generator"], dtype=np.int64)
                                .reshape(d["n"], d["k"][0]), d["targets"], d["alpha"], d["xi"])


def volume_target_ratios(chain):
    """``V(L_i)^{2/n} / (2 pi e P_i)`` for each member of the chain."""
    return tuple(lat.volume ** (2.0 / chain.n) / (2 * math.pi * math.e * t)
                 for lat, t in zip(chain.lattices, chain.targets))
