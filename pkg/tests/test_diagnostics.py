import numpy as np
import pytest

from swimfsi.diagnostics import COLUMNS, Tracker, dissipation, kinetic_energy, read_csv, total_momentum, write_csv
from swimfsi.kinematics import RigidState


def _with(state, U, rigid):
    return type(state)(state.t, U, state.P, rigid, state.ext, state.inertia, state.multiplier)


def test_energy_of_uniform_motion(sim):
    s = sim.initial_state()
    a = np.array([0.3, -0.1, 0.2])
    U = np.zeros_like(s.U)
    U[: sim.mesh.n_nodes] = a
    st = _with(s, U, RigidState(np.zeros(3), a, np.eye(3), np.zeros(3)))
    expected = 0.5 * (sim.mesh.total_volume + sim.op.mass) * a @ a
    assert kinetic_energy(st, sim.system.mass_matrix, sim.op.mass) == pytest.approx(expected, rel=1e-12)
    assert dissipation(st, sim.space, 1.0) < 1e-25
    P = total_momentum(st, sim.system.mass_matrix, sim.op.mass)
    assert np.allclose(P, (sim.mesh.total_volume + sim.op.mass) * a, rtol=1e-12)


def test_dissipation_of_shear(sim):
    s = sim.initial_state()
    U = sim.space.interpolate_function(lambda x: np.stack([x[:, 1], 0 * x[:, 0], 0 * x[:, 0]], axis=1))
    # u = (y, 0, 0): 2 nu |D u|^2 = nu |Omega|
    assert dissipation(_with(s, U, s.rigid), sim.space, 2.0) == pytest.approx(2.0 * sim.mesh.total_volume, rel=1e-12)


def test_initial_record_and_csv_round_trip(tmp_path, sim):
    rec = Tracker(sim).initial(sim.initial_state())
    assert rec.dist_to_wall == pytest.approx(0.7)
    assert rec.piola_residual < 1e-12
    write_csv(tmp_path / "d.csv", [rec, rec])
    rows = read_csv(tmp_path / "d.csv")
    assert len(rows) == 2 and tuple(rows[0]) == COLUMNS
    assert rows[1]["dist_to_wall"] == rec.dist_to_wall
