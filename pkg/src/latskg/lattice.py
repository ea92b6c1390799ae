"""Lattices, fundamental regions, nearest-point quantisation and cosets.

A lattice is stored by a square basis whose *columns* generate it, so a
point is ``B @ z`` for an integer vector ``z``.  Functions accept a single
vector of shape ``(n,)`` or a batch of shape ``(m, n)`` and return the same
shape.
"""
from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np

from . import _kernels
from .errors import (DimensionMismatch, DimensionTooLarge, IndexTooLarge,
                     NonPositiveSigma, NotLatticePoint, NotNested, SingularBasis)

CVP_MAX_DIM = 12
MAX_INDEX = 10 ** 6
MEMBERSHIP_TOL = 1e-9
# fractional coordinates this close to an integer are snapped before flooring
SNAP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Lattice:
    """Full-rank lattice ``B Z^n`` with cached inverse and QR factor."""

    basis: np.ndarray
    dimension: int = field(init=False)
    volume: float = field(init=False)
    inverse_basis: np.ndarray = field(init=False, repr=False)
    q: np.ndarray = field(init=False, repr=False)
    r: np.ndarray = field(init=False, repr=False)
    is_diagonal: bool = field(init=False, repr=False)

    def __post_init__(self):
        B = np.array(self.basis, dtype=np.float64, copy=True)
        if B.ndim != 2 or B.shape[0] != B.shape[1] or B.shape[0] == 0:
            raise DimensionMismatch(f"basis must be a non-empty square matrix, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise SingularBasis("basis has non-finite entries")
        n = B.shape[0]
        scale = max(float(np.abs(B).max()), 1e-300) ** n
        det = float(np.linalg.det(B))
        if not abs(det) > 1e-12 * scale:
            raise SingularBasis(f"basis is rank deficient (|det| = {abs(det):.3g})")
        q, r = np.linalg.qr(B)
        inv = np.linalg.inv(B)
        for arr in (B, inv, q, r):
            arr.setflags(write=False)
        set_ = object.__setattr__
        set_(self, "basis", B)
        set_(self, "dimension", n)
        set_(self, "volume", abs(det))
        set_(self, "inverse_basis", inv)
        set_(self, "q", q)
        set_(self, "r", r)
        set_(self, "is_diagonal", bool(np.count_nonzero(B - np.diag(np.diag(B))) == 0))

    @property
    def key(self):
        return self.basis.tobytes()

    @property
    def covering_bound(self):
        """Upper bound on the covering radius (half the Gram-Schmidt diagonal norm)."""
        return 0.5 * math.sqrt(float(np.sum(np.diag(self.r) ** 2)))

    def __eq__(self, other):
        return isinstance(other, Lattice) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def point(self, z):
        return np.asarray(z, dtype=np.float64) @ self.basis.T

    def real_coords(self, x):
        return np.asarray(x, dtype=np.float64) @ self.inverse_basis.T

    def coords(self, x, tol=MEMBERSHIP_TOL):
        """Integer coordinates of lattice point(s) ``x``; raises NotLatticePoint otherwise."""
        t = self.real_coords(self._check(x))
        z = np.rint(t)
        if np.any(np.abs(t - z) > tol * np.maximum(1.0, np.abs(z))):
            raise NotLatticePoint("vector is not a lattice point")
        return z.astype(np.int64)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        t = self.real_coords(self._check(x))
        return np.all(np.abs(t - np.rint(t)) <= tol * np.maximum(1.0, np.abs(np.rint(t))), axis=-1)

    def rotate(self, x):
        """Coordinates of ``x`` in the QR frame used by the enumeration kernels."""
        return np.asarray(x, dtype=np.float64) @ self.q

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dimension or x.ndim > 2:
            raise DimensionMismatch(f"expected vectors of dimension {self.dimension}, got shape {x.shape}")
        return x


def build_lattice(basis):
    return Lattice(np.asarray(basis, dtype=np.float64))


def integer_lattice(n, scale=1.0):
    return Lattice(scale * np.eye(n))


def dual_lattice(L):
    return Lattice(L.inverse_basis.T)


def scaled(L, c):
    return Lattice(c * L.basis)


class RegionKind(Enum):
    PARALLELEPIPED = "parallelepiped"
    VORONOI = "voronoi"


@dataclass(frozen=True)
class FundamentalRegion:
    kind: RegionKind
    lattice: Lattice


def parallelepiped(L):
    return FundamentalRegion(RegionKind.PARALLELEPIPED, L)


def voronoi(L):
    return FundamentalRegion(RegionKind.VORONOI, L)


def _snapped_floor(t):
    near = np.rint(t)
    t = np.where(np.abs(t - near) <= SNAP_TOL * np.maximum(1.0, np.abs(near)), near, t)
    return np.floor(t)


def reduce_mod(region, x):
    """Split ``x`` into ``(residue, quantized)`` with ``residue`` in the region."""
    L = region.lattice
    x = L._check(x)
    if region.kind is RegionKind.PARALLELEPIPED:
        z = _snapped_floor(L.real_coords(x))
        q = L.point(z)
    else:
        q = nearest_lattice_point(L, x)
    return x - q, q


def mod_parallelepiped(L, x):
    return reduce_mod(parallelepiped(L), x)[0]


def mod_voronoi(L, x):
    return reduce_mod(voronoi(L), x)[0]


def nearest_coords(L, x):
    """Integer coordinates of the nearest lattice point(s) to ``x``."""
    x = L._check(x)
    if L.dimension > CVP_MAX_DIM:
        raise DimensionTooLarge(f"exact CVP is limited to n <= {CVP_MAX_DIM}")
    if L.is_diagonal:
        d = np.diag(L.basis)
        t = x / d
        # ties round down, which is the lexicographically smaller choice per axis
        z = np.ceil(t - 0.5 - SNAP_TOL * np.maximum(1.0, np.abs(t)))
        return z.astype(np.int64)
    Z = _kernels.closest_batch(L.r, np.atleast_2d(L.rotate(x)))
    return Z[0] if x.ndim == 1 else Z


def nearest_lattice_point(L, x):
    return L.point(nearest_coords(L, x))


def vnr(L, sigma):
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    return L.volume ** (2.0 / L.dimension) / sigma ** 2


# ---------------------------------------------------------------------------
# nested pairs and cosets


def _egcd(a, b):
    x0, x1, y0, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a - (a // b) * b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return a, x0, y0


def hermite_upper(M):
    """Upper-triangular column Hermite form of a nonsingular integer matrix.

    Returns ``H`` (as Python ints) with the same column lattice as ``M`` and a
    positive diagonal.
    """
    A = [[int(v) for v in row] for row in np.asarray(M)]
    n = len(A)
    for i in range(n - 1, -1, -1):
        for j in range(i):
            if A[i][j] == 0:
                continue
            a, b = A[i][i], A[i][j]
            g, x, y = _egcd(a, b)
            ag, bg = a // g, b // g
            for row in A:
                ci, cj = row[i], row[j]
                row[i] = x * ci + y * cj
                row[j] = -bg * ci + ag * cj
        if A[i][i] < 0:
            for row in A:
                row[i] = -row[i]
        if A[i][i] == 0:
            raise SingularBasis("integer matrix is singular")
    # reduce entries right of the diagonal into [0, H_ii)
    for i in range(n):
        for j in range(i + 1, n):
            q = A[i][j] // A[i][i]
            if q:
                for row in A:
                    row[j] -= q * row[i]
    return A


@dataclass(frozen=True, eq=False)
class Quotient:
    """The finite group ``fine / coarse`` with a canonical coset numbering."""

    fine: Lattice
    coarse: Lattice
    relation: np.ndarray  # integer M with coarse.basis = fine.basis @ M
    hermite: np.ndarray   # upper-triangular column Hermite form of M
    index: int

    @property
    def radices(self):
        return np.diag(self.hermite)

    def canonical(self, z):
        """Reduce fine-lattice integer coordinates to the canonical box ``0 <= z_i < H_ii``."""
        z = np.array(z, dtype=np.int64, copy=True)
        H = self.hermite
        for i in range(H.shape[0] - 1, -1, -1):
            q = np.floor_divide(z[..., i], H[i, i])
            z -= q[..., None] * H[:, i]
        return z

    def index_of_coords(self, z):
        c = self.canonical(z)
        idx = np.zeros(c.shape[:-1], np.int64)
        for i, radix in enumerate(self.radices):
            idx = idx * radix + c[..., i]
        return idx

    def index_of(self, x):
        """Coset number of fine-lattice point(s) ``x``."""
        return self.index_of_coords(self.fine.coords(x))

    def canonical_coords(self):
        axes = [np.arange(h, dtype=np.int64) for h in self.radices]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(axes))

    def representatives(self):
        """One point per coset, numbered by ``index_of`` and reduced into the coarse parallelepiped."""
        return mod_parallelepiped(self.coarse, self.fine.point(self.canonical_coords()))


def quotient(fine, coarse, max_index=MAX_INDEX):
    if fine.dimension != coarse.dimension:
        raise DimensionMismatch("lattices have different dimensions")
    T = fine.inverse_basis @ coarse.basis
    M = np.rint(T)
    if np.any(np.abs(T - M) > MEMBERSHIP_TOL * np.maximum(1.0, np.abs(M))):
        raise NotNested("coarse generators are not points of the fine lattice")
    index = int(round(coarse.volume / fine.volume))
    if index > max_index:
        raise IndexTooLarge(f"quotient index {index} exceeds limit {max_index}")
    H = np.array(hermite_upper(M.astype(np.int64)), dtype=np.int64)
    if int(np.prod(np.diag(H))) != index:
        raise NotNested("index mismatch between volumes and integer relation")
    return Quotient(fine, coarse, M.astype(np.int64), H, index)


def coset_representatives(fine, coarse, max_index=MAX_INDEX):
    return quotient(fine, coarse, max_index).representatives()


def is_sublattice(coarse, fine):
    try:
        quotient(fine, coarse, max_index=np.iinfo(np.int64).max)
    except NotNested:
        return False
    return True


def voronoi_relevant_vectors(L):
    """Vectors ``v`` whose bisecting half-spaces ``<x, v> <= |v|^2 / 2`` cut out the Voronoi cell.

    For each nonzero class of ``L / 2L`` the shortest members are found by
    enumeration; a class contributes its pair ``+-v`` only when that pair is
    the unique minimum.
    """
    n = L.dimension
    if n > CVP_MAX_DIM:
        raise DimensionTooLarge(f"relevant-vector search is limited to n <= {CVP_MAX_DIM}")
    out = []
    for c in range(1, 2 ** n):
        bits = np.array([(c >> i) & 1 for i in range(n)], dtype=np.float64)
        centre = -0.5 * L.point(bits)
        z0 = nearest_coords(L, centre)
        d0 = float(np.sum((L.point(z0) - centre) ** 2))
        Z, _ = _kernels.ball_points(L.r, L.rotate(centre), d0 * (1 + 1e-9) + 1e-300)
        if len(Z) == 2:
            out.append(2 * (L.point(Z[0]) - centre))
    V = np.array(out).reshape(-1, n)
    return np.concatenate([V, -V])


def in_voronoi(relevant, x, tol=0.0):
    """Closed-cell membership test against precomputed relevant vectors."""
    x = np.asarray(x, dtype=np.float64)
    half = 0.5 * np.sum(relevant * relevant, axis=1)
    return np.all(x @ relevant.T <= half * (1 + tol), axis=-1)
