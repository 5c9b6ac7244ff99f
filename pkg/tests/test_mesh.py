import numpy as np
import pytest

from swimfsi.errors import MeshFormatError, ResolutionTooCoarse
from swimfsi.kinematics import RigidState
from swimfsi.mesh import SOLID, WALL, generate_ball_in_box, load_mesh, load_solid_mesh, save_mesh, solid_wall_distance, tet_rule, tri_rule


def test_quadrature_weights_sum_to_one():
    assert tet_rule().weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert tri_rule().weights.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("powers", [(1, 0, 0, 0), (2, 1, 0, 0), (1, 1, 1, 1), (3, 1, 1, 0), (2, 2, 1, 0)])
def test_tet_rule_exact_to_degree_five(powers):
    # int_T prod l_i^a_i = prod a_i! 3! / (sum a + 3)! |T|
    from math import factorial

    r = tet_rule()
    exact = np.prod([factorial(a) for a in powers]) * 6 / factorial(sum(powers) + 3)
    assert np.sum(r.weights * np.prod(r.bary ** np.array(powers), axis=1)) == pytest.approx(exact, rel=1e-12)


def test_volumes_add_up(mesh, solid):
    assert mesh.total_volume + solid.total_volume == pytest.approx(8.0, rel=1e-12)
    ball = 4 / 3 * np.pi * 0.3**3
    # the inscribed polyhedron loses a few percent at this resolution
    assert 0.9 * ball < solid.total_volume < ball


def test_boundary_tags_and_normals(mesh):
    wall = mesh.facets_with(WALL)
    assert mesh.surface_area(WALL) == pytest.approx(24.0, rel=1e-12)
    c = mesh.nodes[mesh.facets[wall]].mean(axis=1)
    # outward normals on the box point away from the origin
    assert np.all(np.einsum("ki,ki->k", c, mesh.facet_normals[wall]) > 0)
    s = mesh.facets_with(SOLID)
    cs = mesh.nodes[mesh.facets[s]].mean(axis=1)
    # on the interface the fluid normal points into the ball
    assert np.all(np.einsum("ki,ki->k", cs, mesh.facet_normals[s]) < 0)
    assert mesh.surface_area(SOLID) == pytest.approx(4 * np.pi * 0.09, rel=0.05)


def test_interface_nodes_pair_exactly(mesh, solid):
    assert np.array_equal(mesh.nodes[mesh.interface_nodes], solid.nodes[solid.interface_nodes])
    assert np.allclose(np.linalg.norm(mesh.nodes[mesh.interface_nodes], axis=1), 0.3)


def test_p1_mass_matrix_integrates_constants(mesh):
    M = mesh.mass_matrix()
    one = np.ones(mesh.n_nodes)
    assert one @ (M @ one) == pytest.approx(mesh.total_volume, rel=1e-13)


def test_gradient_of_linear_field_is_exact(mesh):
    A = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [2.0, 0.0, 1.0]])
    g = mesh.gradient(mesh.nodes @ A.T)
    assert np.abs(g - A).max() < 1e-12


def test_too_coarse_resolution_is_rejected():
    with pytest.raises(ResolutionTooCoarse):
        generate_ball_in_box(1.0, 0.8, 8)


def test_mesh_file_round_trip(tmp_path, mesh, solid):
    save_mesh(mesh, tmp_path / "f.mesh")
    save_mesh(solid, tmp_path / "s.mesh")
    m2 = load_mesh(tmp_path / "f.mesh")
    s2 = load_solid_mesh(tmp_path / "s.mesh", m2)
    assert np.array_equal(m2.nodes, mesh.nodes)
    assert np.array_equal(np.sort(m2.facet_tags), np.sort(mesh.facet_tags))
    assert np.array_equal(m2.nodes[m2.interface_nodes], s2.nodes[s2.interface_nodes])


def test_bad_mesh_file(tmp_path):
    p = tmp_path / "bad.mesh"
    p.write_text("NOT A MESH\n")
    with pytest.raises(MeshFormatError):
        load_mesh(p)


def test_wall_distance_of_centred_and_shifted_ball(sim):
    state = sim.initial_state()
    assert sim.wall_distance(state) == pytest.approx(0.7, abs=1e-12)
    moved = RigidState(np.array([0.2, 0.0, 0.0]), np.zeros(3), np.eye(3), np.zeros(3))
    assert solid_wall_distance(sim.mesh, moved, sim.deform, 0.0, 1.0) == pytest.approx(0.5, abs=1e-12)
