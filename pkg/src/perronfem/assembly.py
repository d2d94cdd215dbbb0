"""P1 assembly of divergence-form operators with tagged boundary conditions.

The assembled bilinear form on a triangulation is, with piecewise-constant
coefficients per triangle,

    form(u, v) = sum_T |T| * [ grad(v) . a^T grad(u)
                               + (b . grad(v)) * mean(u)
                               + (c . grad(u)) * mean(v)
                               + c0 * quad(u v) ]
                 + sum_{flux edges e} beta_e * quad_e(u v)     (Robin modes)

so that stiffness[i][j] = form(phi_j, phi_i) for nodal hat functions phi.
The zero-order volume term and the Robin edge term are lumped by default
(quad = vertex/trapezoidal rule): lumping keeps their contribution diagonal,
which preserves the sign structure needed for discrete positivity on
nonobtuse meshes. Consistent quadrature is available behind flags for
accuracy studies.

Dirichlet conditions are imposed by row/column elimination so spectra stay
unpolluted; the eliminated vertex set depends on the boundary mode (for
mixed conditions the closed Dirichlet part is eliminated, including
junction vertices shared with flux edges).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryTag, TriMesh


class AssemblyError(ValueError):
    pass


class BoundaryMode(Enum):
    DIRICHLET = "dirichlet"
    ROBIN = "robin"
    COMPLEX_ROBIN = "complex_robin"
    MIXED = "mixed"
    NEUMANN = "neumann"  # Robin with beta identically zero


_ROBIN_FAMILY = (BoundaryMode.ROBIN, BoundaryMode.NEUMANN,
                 BoundaryMode.COMPLEX_ROBIN)


def sym_min_eig(a: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the symmetric part of 2x2 matrices (m, 2, 2)."""
    s01 = 0.5 * (a[:, 0, 1] + a[:, 1, 0])
    mean = 0.5 * (a[:, 0, 0] + a[:, 1, 1])
    radius = np.sqrt((0.5 * (a[:, 0, 0] - a[:, 1, 1])) ** 2 + s01 ** 2)
    return mean - radius


@dataclass(frozen=True)
class EllipticityReport:
    mu_actual: float
    passed: bool


@dataclass(frozen=True)
class MMatrixReport:
    offdiag_max: float
    is_m_compatible: bool


@dataclass(frozen=True)
class CoefficientSet:
    """Piecewise-constant coefficient data for one mesh.

    a : (nt, 2, 2) second-order coefficients
    b : (nt, 2) convection paired with the test gradient
    c : (nt, 2) convection paired with the trial gradient
    c0 : (nt,) zero-order coefficient
    beta : (nb,) boundary coefficient per boundary edge (complex allowed;
        entries on Dirichlet-tagged edges are ignored)
    mu : claimed uniform ellipticity constant (> 0)
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    c0: np.ndarray
    beta: np.ndarray
    mu: float
    validate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "c0", np.asarray(self.c0, dtype=float))
        beta = np.asarray(self.beta)
        if not np.iscomplexobj(beta):
            beta = beta.astype(float)
        object.__setattr__(self, "beta", beta)
        if self.validate:
            if self.mu <= 0:
                raise AssemblyError("ellipticity constant mu must be positive")
            report = ellipticity_check(self)
            if not report.passed:
                raise AssemblyError(
                    f"coefficients violate ellipticity: smallest symmetric-part "
                    f"eigenvalue {report.mu_actual:.6g} < mu = {self.mu:.6g}")

    @classmethod
    def constant(cls, mesh: TriMesh, a=None, b=(0.0, 0.0), c=(0.0, 0.0),
                 c0=0.0, beta=0.0, mu=1.0, validate=True) -> "CoefficientSet":
        """Broadcast global coefficient values over a mesh."""
        nt = mesh.n_triangles
        nb = len(mesh.boundary_edges)
        a = np.eye(2) if a is None else np.asarray(a, dtype=float)
        if a.shape == (2, 2):
            a = np.broadcast_to(a, (nt, 2, 2)).copy()
        b = np.broadcast_to(np.asarray(b, dtype=float), (nt, 2)).copy()
        c = np.broadcast_to(np.asarray(c, dtype=float), (nt, 2)).copy()
        c0 = np.broadcast_to(np.asarray(c0, dtype=float), (nt,)).copy()
        beta_arr = np.asarray(beta)
        dtype = complex if np.iscomplexobj(beta_arr) else float
        beta_full = np.broadcast_to(beta_arr.astype(dtype), (nb,)).copy()
        return cls(a=a, b=b, c=c, c0=c0, beta=beta_full, mu=mu,
                   validate=validate)

    def is_a_symmetric(self) -> bool:
        return bool(np.array_equal(self.a[:, 0, 1], self.a[:, 1, 0]))

    def b_equals_c(self) -> bool:
        return bool(np.array_equal(self.b, self.c))

    def adjoint(self) -> "CoefficientSet":
        """Coefficients of the formal adjoint: a -> a^T, b <-> c, beta -> conj."""
        return replace(self, a=self.a.transpose(0, 2, 1).copy(),
                       b=self.c.copy(), c=self.b.copy(),
                       beta=np.conj(self.beta), validate=False)


def ellipticity_check(coeffs: CoefficientSet) -> EllipticityReport:
    """Smallest symmetric-part eigenvalue over all triangles vs claimed mu."""
    mu_actual = float(sym_min_eig(coeffs.a).min())
    return EllipticityReport(mu_actual=mu_actual, passed=mu_actual >= coeffs.mu)


# ---------------------------------------------------------------------------
# element quantities

def hat_gradients(mesh: TriMesh):
    """Per-triangle areas and constant hat-function gradients (nt, 3, 2).

    The first gradient is formed as minus the sum of the other two, so the
    three gradients of every triangle sum to an exact floating-point zero.
    """
    p = mesh.vertices[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    two_area = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    g = np.empty((mesh.n_triangles, 3, 2))
    g[:, 1, 0] = e2[:, 1] / two_area
    g[:, 1, 1] = -e2[:, 0] / two_area
    g[:, 2, 0] = -e1[:, 1] / two_area
    g[:, 2, 1] = e1[:, 0] / two_area
    g[:, 0] = -g[:, 1] - g[:, 2]
    return 0.5 * two_area, g


def assemble_volume(mesh: TriMesh, coeffs: CoefficientSet, *,
                    lump_reaction: bool = True):
    """Unconstrained volume matrices on all vertices.

    Returns (stiffness, mass, mass_lumped) where stiffness carries the
    second-order, convection, and zero-order terms (no boundary term, no
    eliminations), mass is the consistent P1 mass matrix, and mass_lumped
    is the diagonal of the row-sum lumped mass.
    """
    nv = mesh.n_vertices
    areas, g = hat_gradients(mesh)

    # local(i, j) = |T| * g_i . (a^T g_j)  +  |T|/3 * (b . g_i)
    #             + |T|/3 * (c . g_j)      +  c0-term
    ag = np.einsum("tkl,tjk->tjl", coeffs.a, g)      # (a^T g_j)_l
    local = np.einsum("til,tjl->tij", g, ag) * areas[:, None, None]
    bg = np.einsum("tk,tik->ti", coeffs.b, g) * (areas / 3.0)[:, None]
    cg = np.einsum("tk,tjk->tj", coeffs.c, g) * (areas / 3.0)[:, None]
    local += bg[:, :, None]
    local += cg[:, None, :]
    if lump_reaction:
        c0_diag = coeffs.c0 * areas / 3.0
        local[:, np.arange(3), np.arange(3)] += c0_diag[:, None]
    else:
        w = coeffs.c0 * areas / 12.0
        local += w[:, None, None] * (np.ones((3, 3)) + np.eye(3))

    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, 3).ravel()
    stiffness = sp.coo_matrix((local.ravel(), (rows, cols)),
                              shape=(nv, nv)).tocsr()

    mass_local = (areas / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))
    mass = sp.coo_matrix((mass_local.ravel(), (rows, cols)),
                         shape=(nv, nv)).tocsr()
    mass_lumped = np.zeros(nv)
    np.add.at(mass_lumped, mesh.triangles.ravel(),
              np.repeat(areas / 3.0, 3))
    return stiffness, mass, mass_lumped


def _boundary_term(mesh: TriMesh, beta, nv, lump: bool):
    entries = {"rows": [], "cols": [], "vals": []}

    def add(i, j, v):
        entries["rows"].append(i)
        entries["cols"].append(j)
        entries["vals"].append(v)

    for (i, j), tag, be in zip(mesh.boundary_edges, mesh.boundary_tags, beta):
        if tag is not BoundaryTag.FLUX:
            continue
        length = float(np.linalg.norm(mesh.vertices[i] - mesh.vertices[j]))
        if lump:
            add(i, i, be * length / 2.0)
            add(j, j, be * length / 2.0)
        else:
            add(i, i, be * length / 3.0)
            add(j, j, be * length / 3.0)
            add(i, j, be * length / 6.0)
            add(j, i, be * length / 6.0)
    dtype = complex if np.iscomplexobj(np.asarray(beta)) else float
    return sp.coo_matrix(
        (np.array(entries["vals"], dtype=dtype),
         (entries["rows"], entries["cols"])), shape=(nv, nv)).tocsr()


@dataclass(frozen=True)
class DiscreteOperator:
    """Assembled sparse operator with Dirichlet constraints eliminated.

    dof_map maps mesh vertices to degree-of-freedom indices (-1 for
    constrained vertices). stiffness/mass/mass_lumped act on the free
    dofs; boundary_mass is the (unweighted, lumped) trace mass diagonal
    over free dofs, for diagnostics.
    """

    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    mass_lumped: np.ndarray
    boundary_mass: np.ndarray
    dof_map: np.ndarray
    mode: BoundaryMode
    mesh: TriMesh
    coeffs: CoefficientSet
    lump_reaction: bool
    lump_boundary: bool

    @property
    def n_dof(self) -> int:
        return self.stiffness.shape[0]

    @property
    def free_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.dof_map >= 0)

    @property
    def constrained_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.dof_map < 0)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.stiffness)

    @property
    def is_hermitian(self) -> bool:
        d = self.stiffness - self.stiffness.getH()
        scale = max(1.0, abs(self.stiffness).max())
        return bool(abs(d).max() <= 1e-12 * scale) if d.nnz else True

    def expand(self, u: np.ndarray) -> np.ndarray:
        """Dof vector -> full nodal vector with exact zeros at constraints."""
        u = np.asarray(u)
        full = np.zeros(len(self.dof_map), dtype=u.dtype)
        full[self.free_vertices] = u
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free_vertices]


def _constrained_vertices(mesh: TriMesh, mode: BoundaryMode) -> np.ndarray:
    if mode is BoundaryMode.DIRICHLET:
        return mesh.boundary_vertices()
    if mode is BoundaryMode.MIXED:
        return mesh.dirichlet_vertices()
    return np.array([], dtype=np.int64)


def assemble(mesh: TriMesh, coeffs: CoefficientSet, mode: BoundaryMode, *,
             lump_reaction: bool = True, lump_boundary: bool = True,
             corkscrew_checked: bool = False) -> DiscreteOperator:
    """Assemble the operator for a boundary mode.

    Raises AssemblyError on mode/tag mismatches, ellipticity violations,
    or complex beta outside COMPLEX_ROBIN mode.
    """
    mode = BoundaryMode(mode)
    tags = set(mesh.boundary_tags)
    beta = coeffs.beta
    if np.iscomplexobj(beta) and np.any(beta.imag != 0) \
            and mode is not BoundaryMode.COMPLEX_ROBIN:
        raise AssemblyError("complex beta requires COMPLEX_ROBIN mode")

    if mode is BoundaryMode.DIRICHLET:
        if BoundaryTag.FLUX in tags:
            raise AssemblyError("DIRICHLET mode requires all boundary edges "
                                "tagged D")
    elif mode in _ROBIN_FAMILY:
        if BoundaryTag.DIRICHLET in tags:
            raise AssemblyError(f"{mode.value} mode requires all boundary "
                                "edges tagged N")
        if mode is BoundaryMode.NEUMANN and np.any(beta != 0):
            raise AssemblyError("NEUMANN mode requires beta identically zero")
        if mode is BoundaryMode.COMPLEX_ROBIN:
            if not coeffs.is_a_symmetric():
                raise AssemblyError("COMPLEX_ROBIN requires symmetric a")
            if not coeffs.b_equals_c():
                raise AssemblyError("COMPLEX_ROBIN requires b = c")
    elif mode is BoundaryMode.MIXED:
        if BoundaryTag.DIRICHLET not in tags:
            raise AssemblyError("MIXED mode requires at least one D edge")
        if BoundaryTag.FLUX not in tags:
            warnings.warn("MIXED mode with no flux edges degenerates to "
                          "DIRICHLET", stacklevel=2)
        if np.any(coeffs.b != 0) or np.any(coeffs.c != 0) \
                or np.any(coeffs.c0 != 0):
            raise AssemblyError("MIXED mode requires b = c = c0 = 0")
        if not corkscrew_checked:
            warnings.warn("MIXED assembly without a corkscrew check; "
                          "mixed-boundary positivity claims may not apply",
                          stacklevel=2)

    report = ellipticity_check(coeffs)
    if not report.passed:
        raise AssemblyError(f"ellipticity violated: mu_actual = "
                            f"{report.mu_actual:.6g} < mu = {coeffs.mu:.6g}")

    nv = mesh.n_vertices
    stiffness, mass, mass_lumped = assemble_volume(
        mesh, coeffs, lump_reaction=lump_reaction)
    if mode in _ROBIN_FAMILY:
        bterm = _boundary_term(mesh, beta, nv, lump_boundary)
        stiffness = (stiffness.astype(bterm.dtype) + bterm).tocsr()

    boundary_mass = np.zeros(nv)
    for (i, j) in mesh.boundary_edges:
        length = float(np.linalg.norm(mesh.vertices[i] - mesh.vertices[j]))
        boundary_mass[i] += length / 2.0
        boundary_mass[j] += length / 2.0

    constrained = _constrained_vertices(mesh, mode)
    dof_map = np.full(nv, -1, dtype=np.int64)
    free = np.setdiff1d(np.arange(nv), constrained)
    dof_map[free] = np.arange(len(free))

    stiffness = stiffness[free][:, free].tocsr()
    mass = mass[free][:, free].tocsr()
    return DiscreteOperator(
        stiffness=stiffness, mass=mass, mass_lumped=mass_lumped[free],
        boundary_mass=boundary_mass[free], dof_map=dof_map, mode=mode,
        mesh=mesh, coeffs=coeffs, lump_reaction=lump_reaction,
        lump_boundary=lump_boundary)


def apply_form(op: DiscreteOperator, u: np.ndarray, v: np.ndarray) -> complex:
    """Evaluate the assembled form: conj(v) . (stiffness @ u)."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != (op.n_dof,) or v.shape != (op.n_dof,):
        raise AssemblyError(f"vectors must have length n_dof = {op.n_dof}")
    return complex(np.vdot(v, op.stiffness @ u))


def mmatrix_report(op: DiscreteOperator) -> MMatrixReport:
    """Scan for positive off-diagonal stiffness entries.

    All off-diagonal entries <= 0 (together with lumped mass) is the
    discrete regime in which the positivity certificates are provable.
    """
    if op.is_complex:
        raise AssemblyError("M-matrix report requires a real operator")
    coo = op.stiffness.tocoo()
    off = coo.data[coo.row != coo.col]
    n = op.n_dof
    stored_max = float(off.max()) if off.size else -math.inf
    # unstored pairs are exact zeros and count as off-diagonal entries
    if off.size < n * (n - 1):
        stored_max = max(stored_max, 0.0)
    offdiag_max = stored_max if math.isfinite(stored_max) else 0.0
    return MMatrixReport(offdiag_max=offdiag_max,
                         is_m_compatible=offdiag_max <= 0.0)


# ---------------------------------------------------------------------------
# coefficient file format (JSON)

def coefficients_from_dict(data: dict, mesh: TriMesh) -> tuple:
    """Build (CoefficientSet, BoundaryMode) from the JSON coefficient schema.

    Keys: a (2x2 or per-triangle list), b, c, c0, beta (scalar, {re, im},
    or per-edge list), mu, mode. Missing entries default to the identity
    a, zero lower-order terms, beta = 0, mu = 1.
    """
    known = {"a", "b", "c", "c0", "beta", "mu", "mode"}
    unknown = set(data) - known
    if unknown:
        raise AssemblyError(f"unknown coefficient key(s): {sorted(unknown)}")

    def parse_beta(raw):
        if isinstance(raw, dict):
            extra = set(raw) - {"re", "im"}
            if extra:
                raise AssemblyError(f"unknown beta key(s): {sorted(extra)}")
            return complex(raw.get("re", 0.0), raw.get("im", 0.0))
        if isinstance(raw, list):
            return np.array([parse_beta(x) for x in raw])
        return float(raw)

    a = np.asarray(data.get("a", np.eye(2).tolist()), dtype=float)
    b = np.asarray(data.get("b", [0.0, 0.0]), dtype=float)
    c = np.asarray(data.get("c", [0.0, 0.0]), dtype=float)
    c0 = np.asarray(data.get("c0", 0.0), dtype=float)
    beta = parse_beta(data.get("beta", 0.0))
    mu = float(data.get("mu", 1.0))
    mode = BoundaryMode(data.get("mode", "robin"))

    nt, nb = mesh.n_triangles, len(mesh.boundary_edges)
    if a.shape not in ((2, 2), (nt, 2, 2)):
        raise AssemblyError("a must be a 2x2 matrix or one per triangle")
    if a.shape == (2, 2):
        a = np.broadcast_to(a, (nt, 2, 2)).copy()
    b = np.broadcast_to(b, (nt, 2)).copy()
    c = np.broadcast_to(c, (nt, 2)).copy()
    c0 = np.broadcast_to(c0, (nt,)).copy()
    beta_arr = np.asarray(beta)
    if beta_arr.ndim == 0:
        beta_arr = np.broadcast_to(beta_arr, (nb,)).copy()
    elif beta_arr.shape != (nb,):
        raise AssemblyError(f"beta must be scalar or one value per boundary "
                            f"edge ({nb})")
    coeffs = CoefficientSet(a=a, b=b, c=c, c0=c0, beta=beta_arr, mu=mu)
    return coeffs, mode
