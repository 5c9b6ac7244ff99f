import numpy as np
import pytest

from swimfsi.config import SimConfig
from swimfsi.errors import IncompatibleInitialData
from swimfsi.kinematics import RigidState, rotation_exp
from swimfsi.operators import build_coefficients
from swimfsi.stepper import Simulation, from_physical, run_simulation, to_physical, validate_initial_velocity


@pytest.fixture(scope="module")
def moving(mesh, solid):
    cfg = SimConfig().with_values(
        geometry={"resolution": 8},
        time={"dt": 0.02, "t_end": 0.1},
        initial={"u0": "stokes", "h1": (0.05, 0.0, 0.0), "omega0": (0.0, 0.0, 0.1)},
    )
    sim = Simulation(cfg, mesh=mesh, solid=solid)
    s0 = sim.initial_state()
    s1, stats, extras = sim.step(s0)
    return sim, s0, s1, stats, extras


def test_zero_is_a_fixed_point(sim):
    s0 = sim.initial_state()
    s1, stats, extras = sim.step(s0)
    assert stats.converged and stats.iterations == 1
    assert not s1.U.any() and not s1.rigid_tilde.any()
    assert np.array_equal(s1.rigid.R, np.eye(3))
    assert s1.t == pytest.approx(0.02)


def test_small_data_picard_converges(moving):
    _, _, _, stats, extras = moving
    assert stats.converged and stats.iterations <= 10
    assert stats.contraction_ratios[-1] < 1
    assert extras.interface_bc_residual <= 1e-8


def test_converged_step_is_a_fixed_point(moving):
    sim, s0, s1, _, _ = moving
    # one more application of the Picard map barely moves the state
    c = build_coefficients(s1.ext, *np.split(s1.rigid_tilde, 2), sim.space)
    X, V = sim.deform.evaluate(s1.t)
    idx = sim.solid.interface_nodes
    r = sim.op.rhs(s1.U, s1.P, s1.rigid_tilde, s0.U, s0.rigid_tilde, c, X[idx], V[idx], X, s1.inertia)
    U2, _, z2, _, _ = sim.system.solve(s0.U, s0.rigid_tilde, r.F_vol, r.F_p, np.r_[r.F_M, r.F_I], r.W_bnd)
    scale = sim._norm(s1.U) + np.linalg.norm(s1.rigid_tilde)
    change = sim._norm(U2 - s1.U) + np.linalg.norm(z2 - s1.rigid_tilde)
    assert change <= 10 * sim.cfg.tolerances.tol_picard * scale


def test_rigid_decay_loses_energy(moving):
    from swimfsi.diagnostics import energy_report

    sim, s0, s1, _, extras = moving
    E1, D, res, power = energy_report(s0, s1, 1.0, sim.cfg.dt, sim, extras)
    assert power == 0.0
    assert res <= 1e-10
    assert E1 < energy_report(s0, s0, 1.0, sim.cfg.dt, sim)[0]


def test_rigid_state_moves_along_velocity(moving):
    sim, s0, s1, _, _ = moving
    # h comes from the last extension solve, one Picard increment behind
    assert s1.rigid.h == pytest.approx(sim.cfg.dt * s1.rigid.h_dot, rel=1e-8)
    assert s1.rigid.h[0] > 0
    assert s1.rigid.orthonormality_defect() < 1e-14


def test_initial_velocity_validation(space, rng):
    zero = np.zeros((space.nv, 3))
    assert max(validate_initial_velocity(space, zero, np.zeros(3), np.zeros(3)).values()) == 0.0
    const = np.ones((space.nv, 3))
    rep = validate_initial_velocity(space, const, np.ones(3), np.zeros(3))
    assert rep["wall_trace"] == 1.0 and rep["interface_mismatch"] == 0.0


def test_file_initial_velocity_must_be_compatible(tmp_path, mesh, solid, space):
    np.save(tmp_path / "u0.npy", np.ones((space.N, 3)))
    cfg = SimConfig().with_values(geometry={"resolution": 8}, initial={"u0": "file", "u0_path": str(tmp_path / "u0.npy")})
    with pytest.raises(IncompatibleInitialData):
        Simulation(cfg, mesh=mesh, solid=solid).initial_state()


def test_frame_round_trip(sim, rng):
    s = sim.initial_state()
    rigid = RigidState(rng.standard_normal(3), np.zeros(3), rotation_exp(rng.standard_normal(3)), np.zeros(3))
    U = rng.standard_normal(s.U.shape)
    st = type(s)(0.0, U, s.P, rigid, s.ext, s.inertia, 0.0)
    x, u = to_physical(st, sim.mesh)
    X, Ut = from_physical(x, u, rigid)
    assert np.abs(X - sim.mesh.nodes).max() < 1e-12
    assert np.abs(Ut - U[: sim.mesh.n_nodes]).max() < 1e-12


def test_run_writes_outputs_deterministically(tmp_path, mesh, solid):
    cfg = SimConfig().with_values(
        geometry={"resolution": 8},
        time={"dt": 0.05, "t_end": 0.1, "snapshot_every": 2},
        initial={"u0": "stokes", "h1": (0.02, 0.0, 0.0)},
    )
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        r = run_simulation(cfg, sim=Simulation(cfg, mesh=mesh, solid=solid), out_dir=out)
        runs.append((r, out))
    (r, out), (_, out2) = runs
    assert r.reason == "completed" and r.summary["steps"] == 2
    assert (out / "diagnostics.csv").read_bytes() == (out2 / "diagnostics.csv").read_bytes()
    assert (out / "step_000002.vtk").read_text().startswith("# vtk DataFile Version")
    assert {"config.echo", "summary.json", "diagnostics.csv"} <= {p.name for p in out.iterdir()}


def test_contact_terminates_run(mesh, solid):
    cfg = SimConfig().with_values(geometry={"resolution": 8}, tolerances={"d_min": 0.75})
    r = run_simulation(cfg, sim=Simulation(cfg, mesh=mesh, solid=solid))
    assert r.reason == "contact" and r.summary["steps"] == 0
