"""Discrete heat semigroups: evolution, kernels, positivity certificates.

The implicit Euler step with lumped mass is the workhorse for positivity:
when the stiffness matrix has nonpositive off-diagonal entries, the step
matrix (M_L + dt*A) is an M-matrix and every step maps nonnegative states
to nonnegative states. A single step already has global support in exact
arithmetic, but values decay fast with graph distance, so full-support
certificates only count from the step at which the propagation front has
provably crossed the operator's sparsity graph (its diameter).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import shortest_path

from .assembly import BoundaryMode, DiscreteOperator, mmatrix_report
from .spectral import POSITIVITY_REL_TOL, REGION_FOR_MODE, Region, \
    region_vertices


class Scheme(Enum):
    IMPLICIT_EULER = "implicit_euler"
    CRANK_NICOLSON = "crank_nicolson"


class MassKind(Enum):
    CONSISTENT = "consistent"
    LUMPED = "lumped"


class Verdict(Enum):
    PASS = "pass"
    FAIL = "fail"
    NOT_APPLICABLE = "not_applicable"


@dataclass(frozen=True)
class EvolutionConfig:
    scheme: Scheme = Scheme.IMPLICIT_EULER
    dt: float = 1e-2
    t_end: float = 1.0
    mass: MassKind = MassKind.LUMPED

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "mass", MassKind(self.mass))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least dt")

    @property
    def n_steps(self) -> int:
        # every full step up to t_end
        return int(math.floor(self.t_end / self.dt + 1e-9))


def default_dt(mesh) -> float:
    """Step size balancing damping error against step count: h_max^2 / 4."""
    return mesh.h_max ** 2 / 4.0


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, n_dof)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


class Stepper:
    """One factorized time step, reusable across solves and kernel columns."""

    def __init__(self, op: DiscreteOperator, cfg: EvolutionConfig):
        self.op = op
        self.cfg = cfg
        M = sp.diags(op.mass_lumped).tocsr() if cfg.mass is MassKind.LUMPED \
            else op.mass
        A = op.stiffness
        if cfg.scheme is Scheme.IMPLICIT_EULER:
            lhs = (M + cfg.dt * A).tocsc()
            self._rhs = M.tocsr()
        else:
            lhs = (M + 0.5 * cfg.dt * A).tocsc()
            self._rhs = (M - 0.5 * cfg.dt * A).tocsr()
        try:
            self._lu = spla.splu(lhs)
        except RuntimeError as exc:
            raise RuntimeError(f"singular step matrix: {exc}") from exc
        self.step_matrix = lhs

    def step(self, u: np.ndarray) -> np.ndarray:
        return self._lu.solve(self._rhs @ u)


def evolve(op: DiscreteOperator, u0: np.ndarray,
           cfg: EvolutionConfig) -> Trajectory:
    """Run the one-step scheme from u0; the trajectory includes t = 0 and
    every full step up to t_end."""
    u0 = np.asarray(u0, dtype=complex if op.is_complex else float)
    if u0.shape != (op.n_dof,):
        raise ValueError(f"u0 must have length n_dof = {op.n_dof}")
    stepper = Stepper(op, cfg)
    n = cfg.n_steps
    states = np.empty((n + 1, op.n_dof), dtype=u0.dtype)
    states[0] = u0
    u = u0
    for k in range(1, n + 1):
        try:
            u = stepper.step(u)
        except Exception as exc:
            raise RuntimeError(f"linear solve failed at step {k}: {exc}") \
                from exc
        states[k] = u
    times = cfg.dt * np.arange(n + 1)
    return Trajectory(times=times, states=states)


# ---------------------------------------------------------------------------
# graph thresholds

def propagation_threshold(op: DiscreteOperator) -> int:
    """Diameter of the stiffness sparsity graph over the free dofs.

    Support propagates only along nonzero couplings, so this graph (not
    the mesh edge graph, which may contain zero-weight diagonals) governs
    how many steps full support provably takes.
    """
    coo = op.stiffness.tocoo()
    mask = (coo.row != coo.col) & (coo.data != 0)
    pattern = sp.coo_matrix((np.ones(mask.sum()),
                             (coo.row[mask], coo.col[mask])),
                            shape=coo.shape).tocsr()
    dist = shortest_path(pattern, method="D", unweighted=True, directed=False)
    if np.isinf(dist).any():
        raise RuntimeError("operator sparsity graph is disconnected")
    return int(dist.max())


# ---------------------------------------------------------------------------
# positivity improving check

@dataclass(frozen=True)
class TrialOutcome:
    node: int                     # mesh vertex carrying the unit mass
    first_fully_positive: int     # step index, or -1 if never
    min_at_end: float
    ok: bool


@dataclass(frozen=True)
class PositivityImprovingReport:
    verdict: Verdict
    region: Region
    threshold_step: int
    trials: tuple
    reason: str = ""

    def __bool__(self):
        return self.verdict is Verdict.PASS


def _step_matrix_is_m(op: DiscreteOperator, cfg: EvolutionConfig) -> bool:
    lhs = sp.diags(op.mass_lumped) + cfg.dt * op.stiffness
    coo = lhs.tocoo()
    off_ok = np.all(coo.data[coo.row != coo.col] <= 0.0)
    return bool(off_ok and np.all(lhs.diagonal() > 0.0))


def positivity_improving_check(op: DiscreteOperator, cfg: EvolutionConfig,
                               trials: int | None = None,
                               region: Region | None = None,
                               ) -> PositivityImprovingReport:
    """Evolve single-node indicators and certify that each turns strictly
    positive across the whole region once the step count passes the
    sparsity-graph diameter, staying positive through t_end.

    Requires implicit Euler with lumped mass on an operator whose step
    matrix is an M-matrix; anything else gives NOT_APPLICABLE.
    """
    if region is None:
        region = REGION_FOR_MODE.get(op.mode)
        if region is None:
            return PositivityImprovingReport(
                Verdict.NOT_APPLICABLE, Region.CLOSURE, -1, (),
                reason=f"no positivity region for mode {op.mode.value}")
    if cfg.scheme is not Scheme.IMPLICIT_EULER \
            or cfg.mass is not MassKind.LUMPED:
        return PositivityImprovingReport(
            Verdict.NOT_APPLICABLE, region, -1, (),
            reason="positivity certificates need implicit Euler with "
                   "lumped mass")
    if op.is_complex or not mmatrix_report(op).is_m_compatible:
        return PositivityImprovingReport(
            Verdict.NOT_APPLICABLE, region, -1, (),
            reason="stiffness has positive off-diagonal entries")
    if not _step_matrix_is_m(op, cfg):
        return PositivityImprovingReport(
            Verdict.NOT_APPLICABLE, region, -1, (),
            reason="step matrix is not an M-matrix at this dt")

    threshold = propagation_threshold(op)
    n_steps = cfg.n_steps
    if n_steps < threshold:
        raise ValueError(
            f"t_end allows only {n_steps} steps but the certificate needs "
            f"at least the graph diameter ({threshold})")

    free = op.free_vertices
    if trials is None:
        trials = op.n_dof
    nodes = region_vertices(op, region)
    if np.any(op.dof_map[nodes] < 0):
        return PositivityImprovingReport(
            Verdict.NOT_APPLICABLE, region, -1, (),
            reason="region contains vertices pinned to zero by the "
                   "boundary constraints")

    stepper = Stepper(op, cfg)
    region_dofs = op.dof_map[nodes]
    outcomes = []
    all_ok = True
    for t in range(trials):
        dof = t % op.n_dof
        vertex = int(free[dof])
        u = np.zeros(op.n_dof)
        u[dof] = 1.0
        first_pos = -1
        ok = True
        for k in range(1, n_steps + 1):
            u = stepper.step(u)
            tol = POSITIVITY_REL_TOL * float(np.abs(u).max())
            fully = bool(np.all(u[region_dofs] >= tol))
            if fully and first_pos < 0:
                first_pos = k
            if k >= threshold and not fully:
                ok = False
        min_end = float(u[region_dofs].min())
        ok = ok and first_pos >= 0 and first_pos <= threshold
        all_ok = all_ok and ok
        outcomes.append(TrialOutcome(node=vertex,
                                     first_fully_positive=first_pos,
                                     min_at_end=min_end, ok=ok))
    return PositivityImprovingReport(
        verdict=Verdict.PASS if all_ok else Verdict.FAIL,
        region=region, threshold_step=threshold, trials=tuple(outcomes))


# ---------------------------------------------------------------------------
# kernels

@dataclass(frozen=True)
class KernelMatrix:
    """Discrete heat kernel at time t on the full vertex set.

    Column j is the evolved unit point mass at vertex j (initial state
    e_j / lumped_mass_j), so applying the kernel to the lumped-mass
    weighted nodal values of u reproduces the evolution of u.
    """

    t: float
    entries: np.ndarray          # (n_vertices, n_vertices)
    mode: BoundaryMode
    constrained: np.ndarray      # vertex indices with eliminated dofs
    lumped_mass_full: np.ndarray

    def apply(self, u_full: np.ndarray) -> np.ndarray:
        return self.entries @ (self.lumped_mass_full * u_full)


@dataclass(frozen=True)
class KernelPositivityReport:
    verdict: Verdict
    min_entry: float
    witness: tuple
    boundary_rows_zero: bool
    reason: str = ""


def kernel(op: DiscreteOperator, t: float, cfg: EvolutionConfig,
           ) -> KernelMatrix:
    """Evolve every unit point mass to time t and collect the columns."""
    cfg_t = EvolutionConfig(scheme=cfg.scheme, dt=cfg.dt, t_end=t,
                            mass=cfg.mass)
    n_steps = cfg_t.n_steps
    stepper = Stepper(op, cfg_t)
    nv = op.mesh.n_vertices
    entries = np.zeros((nv, nv),
                       dtype=complex if op.is_complex else float)
    free = op.free_vertices
    lumped_full = np.zeros(nv)
    lumped_full[free] = op.mass_lumped
    for dof, vertex in enumerate(free):
        u = np.zeros(op.n_dof, dtype=entries.dtype)
        u[dof] = 1.0 / op.mass_lumped[dof]
        for _ in range(n_steps):
            u = stepper.step(u)
        entries[free, vertex] = u
    return KernelMatrix(t=n_steps * cfg.dt, entries=entries, mode=op.mode,
                        constrained=op.constrained_vertices,
                        lumped_mass_full=lumped_full)


def kernel_positivity_report(K: KernelMatrix, mode: BoundaryMode | None = None,
                             ) -> KernelPositivityReport:
    """Entrywise positivity over the pairs the boundary mode claims, with
    eliminated rows and columns checked to be exactly zero."""
    mode = K.mode if mode is None else BoundaryMode(mode)
    nv = K.entries.shape[0]
    if np.iscomplexobj(K.entries):
        return KernelPositivityReport(Verdict.NOT_APPLICABLE, math.nan,
                                      (-1, -1), False,
                                      reason="complex kernel")
    live = np.setdiff1d(np.arange(nv), K.constrained)
    boundary_ok = True
    if K.constrained.size:
        boundary_ok = bool(
            np.all(K.entries[K.constrained, :] == 0.0)
            and np.all(K.entries[:, K.constrained] == 0.0))
    block = K.entries[np.ix_(live, live)]
    tol = POSITIVITY_REL_TOL * float(np.abs(K.entries).max())
    arg = np.unravel_index(int(np.argmin(block)), block.shape)
    min_entry = float(block[arg])
    witness = (int(live[arg[0]]), int(live[arg[1]]))
    ok = min_entry >= tol and boundary_ok
    return KernelPositivityReport(
        verdict=Verdict.PASS if ok else Verdict.FAIL,
        min_entry=min_entry, witness=witness,
        boundary_rows_zero=boundary_ok)
