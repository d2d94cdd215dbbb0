import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perronfem.mesh import BoundaryTag, MeshError, TriMesh, check_corkscrew, \
    generate_structured, load_mesh, quality, save_mesh


def edge_set(triangles):
    edges = Counter()
    for t in triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            edges[frozenset((int(a), int(b)))] += 1
    return edges


def test_unit_square_n1_counts():
    mesh = generate_structured("unit_square", 1, "flux")
    assert mesh.n_vertices == 4
    assert mesh.n_triangles == 2
    assert len(mesh.boundary_edges) == 4
    assert all(t is BoundaryTag.FLUX for t in mesh.boundary_tags)


def test_unit_square_n2_all_dirichlet_counts():
    mesh = generate_structured("unit_square", 2, "dirichlet")
    assert mesh.n_vertices == 9
    assert mesh.n_triangles == 8
    assert len(mesh.boundary_edges) == 8
    assert all(t is BoundaryTag.DIRICHLET for t in mesh.boundary_tags)


def test_l_shape_counts_and_euler_characteristic():
    # independent combinatorics: V - E + F = 2 counting the outer face
    mesh = generate_structured("l_shape", 2, "flux")
    assert mesh.n_triangles == 3 * 2 * 2 ** 2  # 24
    edges = edge_set(mesh.triangles)
    V = mesh.n_vertices
    E = len(edges)
    F = mesh.n_triangles + 1
    assert V - E + F == 2
    boundary = [e for e, c in edges.items() if c == 1]
    assert len(boundary) == len(mesh.boundary_edges)


@pytest.mark.parametrize("shape,n,area", [
    ("unit_square", 1, 1.0),
    ("unit_square", 7, 1.0),
    ("l_shape", 3, 3.0),
])
def test_triangle_areas_sum_to_polygon_area(shape, n, area):
    mesh = generate_structured(shape, n, "flux")
    total = mesh.signed_areas().sum()
    assert abs(total - area) <= 1e-12 * area


def test_rectangle_area_and_tags():
    mesh = generate_structured("rectangle", 4, {"bottom": "D", "right": "N",
                                                "top": "N", "left": "N"},
                               width=2.0, height=0.5)
    assert abs(mesh.signed_areas().sum() - 1.0) <= 1e-12
    d_edges = mesh.edges_with_tag(BoundaryTag.DIRICHLET)
    assert np.all(mesh.vertices[np.unique(d_edges)][:, 1] == 0.0)


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_refinement_halves_h_max_exactly(n):
    # power-of-two subdivisions have exactly representable coordinates
    coarse = generate_structured("unit_square", n, "flux")
    fine = generate_structured("unit_square", 2 * n, "flux")
    assert fine.h_max == coarse.h_max / 2


@pytest.mark.parametrize("n", [3, 5, 7])
def test_refinement_halves_h_max_general(n):
    coarse = generate_structured("unit_square", n, "flux")
    fine = generate_structured("unit_square", 2 * n, "flux")
    assert fine.h_max == pytest.approx(coarse.h_max / 2, rel=4e-16)


def test_generator_rejects_bad_input():
    with pytest.raises(MeshError):
        generate_structured("unit_square", 0, "flux")
    with pytest.raises(MeshError):
        generate_structured("unit_square", 2, {"bottom": "D"})  # untagged
    with pytest.raises(MeshError):
        generate_structured("unit_square", 2, {"bottom": "D", "right": "N",
                                               "top": "N", "left": "N",
                                               "inner_h": "N"})


# -- quality ---------------------------------------------------------------

def test_structured_quality():
    q = quality(generate_structured("unit_square", 4, "flux"))
    assert q.min_angle == pytest.approx(45.0, abs=1e-9)
    assert q.max_angle == 90.0
    assert q.is_nonobtuse
    assert q.h_max == pytest.approx(math.sqrt(2) / 4)


def equilateral_mesh():
    verts = [(0.0, 0.0), (1.0, 0.0), (0.5, math.sqrt(3) / 2)]
    return TriMesh(verts, [(0, 1, 2)], [(0, 1), (1, 2), (0, 2)],
                   (BoundaryTag.FLUX,) * 3)


def test_equilateral_angles():
    q = quality(equilateral_mesh())
    assert q.min_angle == pytest.approx(60.0, abs=1e-9)
    assert q.max_angle == pytest.approx(60.0, abs=1e-9)
    assert q.is_nonobtuse


def test_sliver_triangle_quality():
    verts = [(0.0, 0.0), (1.0, 0.0), (0.5, 1e-6)]
    mesh = TriMesh(verts, [(0, 1, 2)], [(0, 1), (1, 2), (0, 2)],
                   (BoundaryTag.FLUX,) * 3)
    q = quality(mesh)
    # direct trigonometry: base angle is atan(1e-6 / 0.5)
    expected_min = math.degrees(math.atan(1e-6 / 0.5))
    assert q.min_angle == pytest.approx(expected_min, rel=1e-6)
    assert q.min_angle < 1e-3
    assert not q.is_nonobtuse


# -- text format -----------------------------------------------------------

def test_save_load_round_trip_is_canonical():
    mesh = generate_structured("l_shape", 2, {"bottom": "D", "right": "N",
                                              "inner_h": "N", "inner_v": "N",
                                              "top": "N", "left": "D"})
    text = save_mesh(mesh)
    again = save_mesh(load_mesh(text))
    assert again == text


def test_load_accepts_comments_and_whitespace():
    text = """# a two-triangle square
trimesh 2
vertices 4
0 0
1 0   # lower right
1 1
0 1
triangles 2
0 1 2
0 2 3
boundary 4
0 1 N
1 2 N
2 3 D
3 0 D
"""
    mesh = load_mesh(text)
    assert mesh.n_triangles == 2
    assert mesh.boundary_tags[2] is BoundaryTag.DIRICHLET


def test_load_reports_clockwise_triangle_index():
    text = """trimesh 2
vertices 4
0 0
1 0
1 1
0 1
triangles 2
0 1 2
0 3 2
boundary 4
0 1 N
1 2 N
2 3 N
3 0 N
"""
    with pytest.raises(MeshError, match="triangle 1"):
        load_mesh(text)


def test_load_rejects_duplicate_boundary_tag():
    text = """trimesh 2
vertices 3
0 0
1 0
0 1
triangles 1
0 1 2
boundary 4
0 1 N
1 2 N
2 0 N
0 1 D
"""
    with pytest.raises(MeshError, match="more than once"):
        load_mesh(text)


def test_load_rejects_untagged_boundary_edge():
    text = """trimesh 2
vertices 3
0 0
1 0
0 1
triangles 1
0 1 2
boundary 2
0 1 N
1 2 N
"""
    with pytest.raises(MeshError, match="untagged"):
        load_mesh(text)


def test_load_reports_malformed_line_number():
    with pytest.raises(MeshError, match="line 3"):
        load_mesh("trimesh 2\nvertices 1\nnot-a-number 0\n")


# -- corkscrew -------------------------------------------------------------

def test_corkscrew_bottom_dirichlet_passes(mixed_mesh8):
    result = check_corkscrew(mixed_mesh8, 0.1)
    assert result.ok
    assert result.witnesses  # one per junction vertex and radius


def test_corkscrew_tiny_dirichlet_part_fails():
    mesh = generate_structured("unit_square", 4, "flux")
    # retag only the two edges meeting at the origin corner as Dirichlet
    tags = []
    for (a, b) in mesh.boundary_edges:
        mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        near_corner = (mid[0] <= 0.26 and mid[1] == 0.0) or \
                      (mid[1] <= 0.26 and mid[0] == 0.0)
        tags.append(BoundaryTag.DIRICHLET if near_corner else
                    BoundaryTag.FLUX)
    mesh = TriMesh(mesh.vertices, mesh.triangles, mesh.boundary_edges,
                   tuple(tags))
    result = check_corkscrew(mesh, 10.0)
    assert not result.ok
    assert result.failure is not None


def test_corkscrew_all_dirichlet_vacuous():
    mesh = generate_structured("unit_square", 2, "dirichlet")
    assert check_corkscrew(mesh, 0.5).ok


@settings(max_examples=20, deadline=None)
@given(delta=st.floats(min_value=0.02, max_value=2.0),
       shrink=st.floats(min_value=0.1, max_value=1.0))
def test_corkscrew_monotone_in_delta(delta, shrink):
    mesh = generate_structured("unit_square", 4,
                               {"bottom": "D", "right": "N", "top": "N",
                                "left": "N"})
    if check_corkscrew(mesh, delta).ok:
        assert check_corkscrew(mesh, delta * shrink).ok


def test_vertex_adjacency_counts():
    mesh = generate_structured("unit_square", 2, "flux")
    adj = mesh.vertex_adjacency()
    degrees = np.asarray(adj.sum(axis=1)).ravel()
    # center vertex of the 3x3 grid touches all six triangle-edge neighbors
    center = np.flatnonzero((mesh.vertices == 0.5).all(axis=1))[0]
    assert degrees[center] == 6
    # 2E entries, with 2E = 3T + B for a conforming triangulation
    assert adj.nnz == 3 * mesh.n_triangles + len(mesh.boundary_edges)


# -- invariant validation ---------------------------------------------------

def test_constructor_rejects_nonconforming_boundary():
    verts = [(0, 0), (1, 0), (1, 1), (0, 1)]
    tris = [(0, 1, 2), (0, 2, 3)]
    with pytest.raises(MeshError):
        TriMesh(verts, tris, [(0, 1), (1, 2), (2, 3)],
                (BoundaryTag.FLUX,) * 3)  # missing edge (3, 0)


def test_constructor_rejects_disconnected_mesh():
    verts = [(0, 0), (1, 0), (0, 1), (5, 5), (6, 5), (5, 6)]
    tris = [(0, 1, 2), (3, 4, 5)]
    edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]
    with pytest.raises(MeshError, match="connected"):
        TriMesh(verts, tris, edges, (BoundaryTag.FLUX,) * 6)
