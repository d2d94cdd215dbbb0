"""Conforming triangular meshes of 2-D polygonal domains.

Meshes carry a partition of the boundary into a Dirichlet part ``D``
(tag ``DIRICHLET``) and a flux part ``N`` (tag ``FLUX``, Robin/Neumann).
Structured generators split every rectangular cell along a fixed
diagonal, which makes all triangles right triangles and therefore
nonobtuse; downstream positivity certificates rely on that.

A plain text format is supported for interchange, see :func:`save_mesh`.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass
from enum import Enum

import numpy as np


class MeshError(ValueError):
    """Raised for invalid mesh data; carries the offending simplex index."""


class BoundaryTag(Enum):
    DIRICHLET = "D"
    FLUX = "N"


_TAG_ALIASES = {
    "d": BoundaryTag.DIRICHLET,
    "dirichlet": BoundaryTag.DIRICHLET,
    "n": BoundaryTag.FLUX,
    "flux": BoundaryTag.FLUX,
    "neumann": BoundaryTag.FLUX,
    "robin": BoundaryTag.FLUX,
}


def as_tag(value) -> BoundaryTag:
    if isinstance(value, BoundaryTag):
        return value
    try:
        return _TAG_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise MeshError(f"unknown boundary tag {value!r}") from None


@dataclass(frozen=True)
class MeshQuality:
    min_angle: float  # degrees
    max_angle: float  # degrees
    is_nonobtuse: bool
    h_max: float


@dataclass(frozen=True)
class CorkscrewResult:
    """Outcome of the Dirichlet-part thickness check.

    ``witnesses`` maps ``(vertex, r)`` to a point ``y`` of ``D`` that keeps
    the ball ``B(y, delta*r)`` clear of the flux part; on failure,
    ``failure`` names the first ``(vertex, r)`` with no such point.
    """

    ok: bool
    delta: float
    witnesses: dict
    failure: tuple | None = None

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class TriMesh:
    """Immutable conforming triangulation with tagged boundary edges.

    vertices : (nv, 2) float array of coordinates
    triangles : (nt, 3) int array, counterclockwise vertex triples
    boundary_edges : (nb, 2) int array; exactly the edges lying in one triangle
    boundary_tags : tuple of BoundaryTag, one per boundary edge
    domain_label : free-text description
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    domain_label: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        e = np.ascontiguousarray(np.asarray(self.boundary_edges, dtype=np.int64))
        if e.size == 0:
            e = e.reshape(0, 2)
        tags = tuple(as_tag(x) for x in self.boundary_tags)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "boundary_edges", e)
        object.__setattr__(self, "boundary_tags", tags)
        self._validate()
        for arr in (v, t, e):
            arr.setflags(write=False)

    # -- derived quantities ------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        out = np.empty((self.n_triangles, 3))
        for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
            out[:, k] = np.linalg.norm(p[:, i] - p[:, j], axis=1)
        return out

    @property
    def h_max(self) -> float:
        return float(self.edge_lengths().max())

    def boundary_vertices(self) -> np.ndarray:
        """Sorted indices of vertices lying on the boundary."""
        return np.unique(self.boundary_edges)

    def dirichlet_vertices(self) -> np.ndarray:
        """Vertices on the closed Dirichlet part (endpoints of D-edges)."""
        mask = [tag is BoundaryTag.DIRICHLET for tag in self.boundary_tags]
        if not any(mask):
            return np.array([], dtype=np.int64)
        return np.unique(self.boundary_edges[np.asarray(mask)])

    def edges_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        mask = [t is tag for t in self.boundary_tags]
        return self.boundary_edges[np.asarray(mask, dtype=bool)] if mask else \
            np.empty((0, 2), dtype=np.int64)

    def vertex_adjacency(self):
        """Sparse symmetric vertex-vertex adjacency over triangle edges."""
        import scipy.sparse as sp

        rows, cols = [], []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            rows.extend(self.triangles[:, a])
            cols.extend(self.triangles[:, b])
        data = np.ones(len(rows))
        adj = sp.coo_matrix((data, (rows, cols)),
                            shape=(self.n_vertices, self.n_vertices))
        adj = adj + adj.T
        adj.data[:] = 1.0
        return adj.tocsr()

    # -- validation ----------------------------------------------------------

    def _validate(self):
        nv = len(self.vertices)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (n, 2) array")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("vertex coordinates must be finite")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (m, 3) array")
        if len(self.triangles) == 0:
            raise MeshError("mesh has no triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= nv:
            raise MeshError("triangle vertex index out of range")

        areas = self.signed_areas()
        bad = np.flatnonzero(areas <= 0)
        if bad.size:
            raise MeshError(
                f"triangle {bad[0]} has nonpositive signed area "
                f"({areas[bad[0]]:.3e}); vertices must be counterclockwise")

        counts = Counter()
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                if a == b:
                    raise MeshError(f"degenerate edge in triangle {tri}")
                counts[frozenset((int(a), int(b)))] += 1
        over = [e for e, c in counts.items() if c > 2]
        if over:
            raise MeshError(f"edge {sorted(over[0])} shared by more than two "
                            "triangles; mesh is not conforming")

        expected_boundary = {e for e, c in counts.items() if c == 1}
        given = [frozenset((int(a), int(b))) for a, b in self.boundary_edges]
        dup = Counter(given)
        worst = dup.most_common(1)
        if worst and worst[0][1] > 1:
            raise MeshError(f"boundary edge {sorted(worst[0][0])} listed "
                            "more than once (duplicate tag)")
        if set(given) != expected_boundary:
            missing = expected_boundary - set(given)
            extra = set(given) - expected_boundary
            detail = []
            if missing:
                detail.append(f"untagged boundary edge {sorted(next(iter(missing)))}")
            if extra:
                detail.append(f"edge {sorted(next(iter(extra)))} is not a boundary edge")
            raise MeshError("; ".join(detail))
        if len(self.boundary_tags) != len(self.boundary_edges):
            raise MeshError("one tag required per boundary edge")

        self._check_connected(counts)

    def _check_connected(self, edge_counts):
        # triangle adjacency through shared edges
        edge_to_tris = {}
        for ti, tri in enumerate(self.triangles):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                edge_to_tris.setdefault(frozenset((int(a), int(b))), []).append(ti)
        seen = {0}
        queue = deque([0])
        neighbours = [[] for _ in range(self.n_triangles)]
        for tris in edge_to_tris.values():
            if len(tris) == 2:
                neighbours[tris[0]].append(tris[1])
                neighbours[tris[1]].append(tris[0])
        while queue:
            ti = queue.popleft()
            for tj in neighbours[ti]:
                if tj not in seen:
                    seen.add(tj)
                    queue.append(tj)
        if len(seen) != self.n_triangles:
            raise MeshError("triangle adjacency graph is not connected")


# ---------------------------------------------------------------------------
# structured generation

_SHAPE_SEGMENTS = {
    "unit_square": ("bottom", "right", "top", "left"),
    "rectangle": ("bottom", "right", "top", "left"),
    "l_shape": ("bottom", "right", "inner_h", "inner_v", "top", "left"),
}


def _resolve_tag_rule(shape: str, tags) -> dict:
    segments = _SHAPE_SEGMENTS[shape]
    if isinstance(tags, (BoundaryTag, str)):
        tag = as_tag(tags)
        return {seg: tag for seg in segments}
    rule = {seg: as_tag(t) for seg, t in dict(tags).items()}
    unknown = set(rule) - set(segments)
    if unknown:
        raise MeshError(f"unknown boundary segment(s) {sorted(unknown)} "
                        f"for shape {shape!r}")
    missing = [seg for seg in segments if seg not in rule]
    if missing:
        raise MeshError(f"boundary segment(s) {missing} left untagged")
    return rule


def _grid_mesh(nx, ny, width, height, keep_cell):
    """Right-triangle mesh over grid cells selected by ``keep_cell(i, j)``.

    Each kept cell is split along the diagonal from its lower-left to its
    upper-right corner, producing counterclockwise right triangles.
    Coordinates are (i * width) / nx so that grid points shared between a
    mesh and its refinement coincide bitwise.
    """
    used = {}
    verts = []

    def vid(i, j):
        key = (i, j)
        if key not in used:
            used[key] = len(verts)
            verts.append(((i * width) / nx, (j * height) / ny))
        return used[key]

    tris = []
    for j in range(ny):
        for i in range(nx):
            if not keep_cell(i, j):
                continue
            v00 = vid(i, j)
            v10 = vid(i + 1, j)
            v01 = vid(i, j + 1)
            v11 = vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return np.array(verts, dtype=float), np.array(tris, dtype=np.int64)


def _segment_of_point(shape, x, y, w, h):
    # classify a boundary-edge midpoint; tolerances are exact for grid points
    eps = 1e-12 * max(w, h, 1.0)
    if shape in ("unit_square", "rectangle"):
        if abs(y) <= eps:
            return "bottom"
        if abs(x - w) <= eps:
            return "right"
        if abs(y - h) <= eps:
            return "top"
        if abs(x) <= eps:
            return "left"
    else:  # l_shape on [0,2]^2 minus (1,2]x(1,2]
        if abs(y) <= eps:
            return "bottom"
        if abs(x - 2.0) <= eps:
            return "right"
        if abs(y - 1.0) <= eps and x >= 1.0 - eps:
            return "inner_h"
        if abs(x - 1.0) <= eps and y >= 1.0 - eps:
            return "inner_v"
        if abs(y - 2.0) <= eps:
            return "top"
        if abs(x) <= eps:
            return "left"
    return None


def generate_structured(shape: str, n: int, tags="flux", *,
                        width: float = 1.0, height: float = 1.0) -> TriMesh:
    """Build a structured right-triangle mesh of a reference shape.

    Parameters
    ----------
    shape : {"unit_square", "rectangle", "l_shape"}
        ``rectangle`` spans [0, width] x [0, height]; ``l_shape`` is
        [0, 2]^2 with the open top-right unit square removed, meshed at
        grid spacing 1/n.
    n : int
        Subdivisions per unit cell edge (n >= 1).
    tags : BoundaryTag, str, or {segment: tag}
        Either one tag for the whole boundary or a mapping that covers
        every boundary segment of the shape. Square/rectangle segments:
        bottom, right, top, left. L-shape adds inner_h, inner_v.
    """
    if n < 1:
        raise MeshError("subdivision count n must be >= 1")
    if shape not in _SHAPE_SEGMENTS:
        raise MeshError(f"unknown shape {shape!r}")
    rule = _resolve_tag_rule(shape, tags)

    if shape == "unit_square":
        w = h = 1.0
        verts, tris = _grid_mesh(n, n, 1.0, 1.0, lambda i, j: True)
    elif shape == "rectangle":
        if width <= 0 or height <= 0:
            raise MeshError("rectangle needs positive width and height")
        w, h = float(width), float(height)
        verts, tris = _grid_mesh(n, n, w, h, lambda i, j: True)
    else:
        w = h = 2.0
        verts, tris = _grid_mesh(2 * n, 2 * n, 2.0, 2.0,
                                 lambda i, j: i < n or j < n)

    counts = Counter()
    for tri in tris:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            counts[frozenset((int(a), int(b)))] += 1
    bedges = sorted(tuple(sorted(e)) for e, c in counts.items() if c == 1)
    btags = []
    for a, b in bedges:
        mid = 0.5 * (verts[a] + verts[b])
        seg = _segment_of_point(shape, mid[0], mid[1], w, h)
        if seg is None:
            raise MeshError(f"boundary edge ({a}, {b}) not on any shape segment")
        btags.append(rule[seg])

    label = shape if shape != "rectangle" else f"rectangle({w}x{h})"
    return TriMesh(verts, tris, np.array(bedges, dtype=np.int64),
                   tuple(btags), domain_label=f"{label} n={n}")


# ---------------------------------------------------------------------------
# text format

def save_mesh(mesh: TriMesh) -> str:
    """Serialize to the canonical text form (idempotent under load/save)."""
    lines = ["trimesh 2", f"vertices {mesh.n_vertices}"]
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    lines.append(f"triangles {mesh.n_triangles}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        lines.append(f"{i} {j} {tag.value}")
    return "\n".join(lines) + "\n"


class _Lines:
    def __init__(self, text):
        self.items = []  # (lineno, tokens)
        for no, raw in enumerate(text.splitlines(), start=1):
            body = raw.split("#", 1)[0].strip()
            if body:
                self.items.append((no, body.split()))
        self.pos = 0

    def next(self, what):
        if self.pos >= len(self.items):
            raise MeshError(f"unexpected end of file while reading {what}")
        item = self.items[self.pos]
        self.pos += 1
        return item


def load_mesh(text: str) -> TriMesh:
    """Parse the text format; reports line numbers on malformed input."""
    src = _Lines(text)

    no, tok = src.next("header")
    if tok != ["trimesh", "2"]:
        raise MeshError(f"line {no}: expected header 'trimesh 2'")

    def read_count(keyword):
        no, tok = src.next(f"'{keyword}' count")
        if len(tok) != 2 or tok[0] != keyword:
            raise MeshError(f"line {no}: expected '{keyword} <count>'")
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshError(f"line {no}: malformed count {tok[1]!r}") from None
        if count < 0:
            raise MeshError(f"line {no}: negative count")
        return count

    nv = read_count("vertices")
    verts = np.empty((nv, 2))
    for i in range(nv):
        no, tok = src.next(f"vertex {i}")
        if len(tok) != 2:
            raise MeshError(f"line {no}: vertex needs two coordinates")
        try:
            verts[i] = [float(tok[0]), float(tok[1])]
        except ValueError:
            raise MeshError(f"line {no}: malformed coordinate") from None

    nt = read_count("triangles")
    tris = np.empty((nt, 3), dtype=np.int64)
    for i in range(nt):
        no, tok = src.next(f"triangle {i}")
        if len(tok) != 3:
            raise MeshError(f"line {no}: triangle needs three vertex indices")
        try:
            tris[i] = [int(t) for t in tok]
        except ValueError:
            raise MeshError(f"line {no}: malformed vertex index") from None

    nb = read_count("boundary")
    bedges = np.empty((nb, 2), dtype=np.int64)
    btags = []
    for i in range(nb):
        no, tok = src.next(f"boundary edge {i}")
        if len(tok) != 3:
            raise MeshError(f"line {no}: boundary edge needs 'i j TAG'")
        try:
            bedges[i] = [int(tok[0]), int(tok[1])]
        except ValueError:
            raise MeshError(f"line {no}: malformed vertex index") from None
        if tok[2] not in ("D", "N"):
            raise MeshError(f"line {no}: tag must be D or N, got {tok[2]!r}")
        btags.append(as_tag(tok[2]))

    if src.pos != len(src.items):
        no, _ = src.items[src.pos]
        raise MeshError(f"line {no}: trailing content after mesh data")

    return TriMesh(verts, tris, bedges, tuple(btags))


# ---------------------------------------------------------------------------
# quality and corkscrew checks

def quality(mesh: TriMesh) -> MeshQuality:
    """Per-triangle angle extremes and the nonobtuseness flag.

    Angles come from atan2(cross, dot), which stays accurate for slivers;
    obtuseness is decided by the (exact) sign of the dot product, which
    agrees with the 90-degree threshold even for exact right angles.
    """
    p = mesh.vertices[mesh.triangles]
    min_angle = math.inf
    max_angle = -math.inf
    nonobtuse = True
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        u = p[:, b] - p[:, a]
        v = p[:, c] - p[:, a]
        dots = np.einsum("ij,ij->i", u, v)
        crosses = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        if np.any(dots < 0):
            nonobtuse = False
        angles = np.degrees(np.arctan2(crosses, dots))
        min_angle = min(min_angle, angles.min())
        max_angle = max(max_angle, angles.max())
    if nonobtuse:
        max_angle = min(max_angle, 90.0)
    return MeshQuality(min_angle=min_angle, max_angle=max_angle,
                       is_nonobtuse=nonobtuse, h_max=mesh.h_max)


def _point_segment_distance(points, a, b):
    """Distances from an array of points to segment [a, b]."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def _sample_segment(a, b, resolution):
    length = float(np.linalg.norm(b - a))
    k = max(1, int(math.ceil(length / resolution)))
    ts = np.linspace(0.0, 1.0, k + 1)
    return a + ts[:, None] * (b - a)


def check_corkscrew(mesh: TriMesh, delta: float) -> CorkscrewResult:
    """Sampling check that the Dirichlet part is thick near its relative
    boundary: for each vertex x where a D-edge meets an N-edge, and each
    radius r on the dyadic grid {1, 1/2, ...} down to h_max, look for a
    point y of D within distance r of x whose delta*r-ball avoids N.

    This is a finite search (candidate y sampled on D-edges at spacing
    h_max/4), so a True result is evidence, not a proof; False results
    exhibit a concrete failing (x, r).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    d_edges = mesh.edges_with_tag(BoundaryTag.DIRICHLET)
    n_edges = mesh.edges_with_tag(BoundaryTag.FLUX)
    if len(d_edges) == 0 or len(n_edges) == 0:
        # relative boundary of D is empty; every quantifier is vacuous
        return CorkscrewResult(ok=True, delta=delta, witnesses={})

    d_vertices = set(np.unique(d_edges).tolist())
    n_vertices = set(np.unique(n_edges).tolist())
    junction = sorted(d_vertices & n_vertices)

    radii = []
    r = 1.0
    while r > mesh.h_max:
        radii.append(r)
        r *= 0.5
    radii.append(r)

    resolution = mesh.h_max / 4.0
    candidates = np.vstack([
        _sample_segment(mesh.vertices[a], mesh.vertices[b], resolution)
        for a, b in d_edges])
    dist_to_n = np.min(np.vstack([
        _point_segment_distance(candidates, mesh.vertices[a], mesh.vertices[b])
        for a, b in n_edges]), axis=0)

    witnesses = {}
    for x_idx in junction:
        x = mesh.vertices[x_idx]
        dist_to_x = np.linalg.norm(candidates - x, axis=1)
        for r in radii:
            ok = (dist_to_x <= r) & (dist_to_n >= delta * r)
            hits = np.flatnonzero(ok)
            if hits.size == 0:
                return CorkscrewResult(ok=False, delta=delta,
                                       witnesses=witnesses,
                                       failure=(int(x_idx), r))
            witnesses[(int(x_idx), r)] = candidates[hits[0]].copy()
    return CorkscrewResult(ok=True, delta=delta, witnesses=witnesses)
