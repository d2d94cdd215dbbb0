"""Exact finite-dimensional positive matrix semigroups.

A square matrix with nonnegative off-diagonal entries generates an
entrywise-nonnegative semigroup exp(tQ); coordinate subsets play the role
of closed ideals, irreducibility is strong connectivity of the coupling
graph, and Perron theory supplies the principal eigenpair. Everything
here is small and dense, so claims can be checked exhaustively: up to
dimension six, irreducibility is cross-checked against brute-force
enumeration of all invariant coordinate masks.

Semigroup values are post-processed with the exact sign structure of the
coupling graph: entries that graph reachability proves to be exactly zero
are snapped to zero, so positivity verdicts never hinge on rounding dust.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.linalg import expm
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

EXHAUSTIVE_DIM = 6
SNAP_TOL = 1e-14


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class MetzlerGenerator:
    """Generator with exactly nonnegative off-diagonal entries."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
            raise LatticeError("Q must be a square matrix of dimension >= 1")
        off = Q - np.diag(np.diag(Q))
        if off.min() < 0:
            i, j = np.unravel_index(int(np.argmin(off)), Q.shape)
            raise LatticeError(
                f"off-diagonal entry Q[{i}][{j}] = {Q[i, j]} is negative")
        object.__setattr__(self, "Q", Q)
        Q.setflags(write=False)

    @property
    def n(self) -> int:
        return self.Q.shape[0]


def _reachability(g: MetzlerGenerator) -> np.ndarray:
    """reach[i][j] True iff exp(tQ)[i][j] > 0 for t > 0 (path j -> i,
    including the trivial path i == j)."""
    n = g.n
    pattern = (g.Q - np.diag(np.diag(g.Q))) > 0
    reach = np.eye(n, dtype=bool)
    while True:
        new = reach | (pattern @ reach)
        if np.array_equal(new, reach):
            return reach
        reach = new


def semigroup_at(g: MetzlerGenerator, t: float) -> np.ndarray:
    """exp(tQ) with graph-exact zeros.

    Entries the coupling graph proves zero are snapped to exact 0 when
    numerically below SNAP_TOL (they always are; a larger value would
    indicate a broken exponential).
    """
    if t < 0:
        raise LatticeError("semigroup defined for t >= 0")
    S = expm(t * g.Q)
    if t == 0:
        return np.eye(g.n)
    reach = _reachability(g)
    scale = max(1.0, float(np.abs(S).max()))
    dead = ~reach
    if np.any(np.abs(S[dead]) > SNAP_TOL * scale):
        raise LatticeError("matrix exponential inconsistent with the "
                           "coupling graph")
    S[dead] = 0.0
    return S


def invariant_masks(g: MetzlerGenerator, t: float = 1.0) -> list:
    """All nontrivial coordinate masks B whose ideal {u : u|_B = 0} is
    invariant under exp(tQ): exactly the B with zero block S[B, not B]."""
    S = semigroup_at(g, t)
    n = g.n
    masks = []
    for size in range(1, n):
        for B in combinations(range(n), size):
            rest = [j for j in range(n) if j not in B]
            if np.all(S[np.ix_(list(B), rest)] == 0.0):
                masks.append(frozenset(B))
    return masks


def is_irreducible(g: MetzlerGenerator) -> bool:
    """No nontrivial invariant coordinate ideal.

    Decided by strong connectivity of the coupling graph (edge i -> j when
    Q[j][i] > 0); for dimension <= 6 the verdict is cross-checked against
    exhaustive ideal-mask enumeration.
    """
    pattern = (g.Q - np.diag(np.diag(g.Q))) > 0
    ncomp, _ = connected_components(csr_matrix(pattern.T), directed=True,
                                    connection="strong")
    verdict = ncomp == 1
    if g.n <= EXHAUSTIVE_DIM:
        brute = len(invariant_masks(g)) == 0
        if brute != verdict:
            raise LatticeError("strong-connectivity verdict disagrees with "
                               "exhaustive ideal enumeration")
    return verdict


def positivity_improving_equiv(g: MetzlerGenerator,
                               t_samples=(0.01, 1.0, 10.0)) -> bool:
    """Whether exp(tQ) is entrywise positive at every sample time.

    For dimension <= 6 this is asserted (column by column over all basis
    vectors) to coincide with irreducibility.
    """
    improving = all(np.all(semigroup_at(g, t) > 0.0) for t in t_samples)
    if g.n <= EXHAUSTIVE_DIM:
        irr = is_irreducible(g)
        for t in t_samples:
            S = semigroup_at(g, t)
            basis_ok = all(np.all(S[:, j] > 0.0) for j in range(g.n))
            if basis_ok != irr:
                raise LatticeError(
                    "positivity-improving sample disagrees with "
                    "irreducibility")
    return improving


def point_positivity_theorem(g: MetzlerGenerator, x: int,
                             t_grid=(0.1, 1.0)) -> bool:
    """For an irreducible generator: if any state ever registers at
    coordinate x, then every nonnegative nonzero state registers there at
    every positive time. Verified by brute force over basis vectors."""
    if not is_irreducible(g):
        raise LatticeError("theorem hypotheses need an irreducible generator")
    if not 0 <= x < g.n:
        raise LatticeError(f"coordinate {x} out of range")
    witnessed = any(semigroup_at(g, t)[x, j] != 0.0
                    for t in t_grid for j in range(g.n))
    if not witnessed:
        return False
    return all(np.all(semigroup_at(g, t)[x, :] > 0.0) for t in t_grid)


@dataclass(frozen=True)
class PerronReport:
    lambda1: float
    vector: np.ndarray
    simple: bool
    gap: float


def perron_report(g: MetzlerGenerator, tol: float = 1e-9) -> PerronReport:
    """Principal eigenvalue of A = -Q (minimal real part), its eigenvector,
    simplicity, and the gap to the rest of the spectrum.

    The bottom of the spectrum of -Q is always attained by a real
    eigenvalue (the negated spectral bound of the generator). For
    irreducible generators it is simple with a strictly positive
    eigenvector; reducible inputs may report a multiple eigenvalue
    (simple = False) and an eigenvector with zeros.
    """
    A = -g.Q
    values, vectors = np.linalg.eig(A)
    lam1 = float(values.real.min())
    scale = max(1.0, abs(lam1))
    cluster = np.flatnonzero(np.abs(values - lam1) <= tol * scale)
    simple = len(cluster) == 1
    rest = np.setdiff1d(np.arange(g.n), cluster)
    gap = float(values.real[rest].min() - lam1) if rest.size else 0.0

    idx = int(np.argmin(np.abs(values - lam1)))
    v = np.real(vectors[:, idx])
    v = v / np.linalg.norm(v)
    if v.sum() < 0 or (v.sum() == 0 and v[np.flatnonzero(v)[0]] < 0):
        v = -v
    snapped = np.where(np.abs(v) <= SNAP_TOL, 0.0, v)
    return PerronReport(lambda1=lam1, vector=snapped, simple=simple, gap=gap)


def schaefer_approx_check(u: np.ndarray, v: np.ndarray) -> bool:
    """Whether min(v, k*u) converges to v as k grows: exactly when the
    support of v is contained in the support of u."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise LatticeError("u and v must be vectors of equal length")
    if u.min() < 0 or v.min() < 0:
        raise LatticeError("u and v must be nonnegative")
    return bool(np.all(v[u == 0.0] == 0.0))


def is_quasi_interior(u: np.ndarray) -> bool:
    """Full support: min(v, k*u) -> v for every nonnegative v."""
    u = np.asarray(u, dtype=float)
    if u.min() < 0:
        raise LatticeError("u must be nonnegative")
    return bool(np.all(u > 0.0))


def random_metzler(rng: np.random.Generator, n: int | None = None,
                   max_dim: int = EXHAUSTIVE_DIM) -> MetzlerGenerator:
    """Seeded generator sampler mixing sparse and dense coupling patterns."""
    if n is None:
        n = int(rng.integers(1, max_dim + 1))
    density = float(rng.uniform(0.1, 0.9))
    off = rng.uniform(0.0, 2.0, size=(n, n)) * \
        (rng.uniform(size=(n, n)) < density)
    np.fill_diagonal(off, 0.0)
    diag = rng.uniform(-2.0, 0.5, size=n)
    return MetzlerGenerator(off + np.diag(diag))
