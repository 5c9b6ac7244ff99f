"""Acceptance criteria 1-8 at their stated tolerances and runtime budgets.

Each test appends one PASS/FAIL line to ``RESULTS``; the lines are printed in
the pytest terminal summary (see conftest.py) and when this file is run as a
script.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from swimfsi.config import SimConfig
from swimfsi.extension import advance_extension, cofactor, identity_extension, piola_residual_p1
from swimfsi.fe import MiniSpace
from swimfsi.kinematics import (
    DilationFamily,
    RawDeformation,
    RigidState,
    TravellingWaveFamily,
    constraint_residuals,
    integrate_rotation,
    project_deformation,
    project_velocity,
    rotation_exp,
)
from swimfsi.linsolve import CoupledSystem, StokesSolver, manufactured_stokes
from swimfsi.mesh import generate_ball_in_box
from swimfsi.stepper import Simulation, from_physical, run_simulation, to_physical

RESULTS: list[str] = []

pytestmark = pytest.mark.acceptance


def report(n: int, checks: dict, seconds: float, limit: float) -> bool:
    """Record one line: every named check must hold and the runtime must fit."""
    ok_time = seconds < limit
    passed = all(ok for ok, _ in checks.values()) and ok_time
    parts = [f"{name}={'ok' if ok else 'FAIL'}({text})" for name, (ok, text) in checks.items()]
    parts.append(f"runtime={seconds:.1f}s<{limit:.0f}s{'' if ok_time else ' FAIL'}")
    RESULTS.append(f"criterion {n}: {'PASS' if passed else 'FAIL'}  " + "; ".join(parts))
    return passed


def _le(value: float, tol: float) -> tuple[bool, str]:
    return bool(value <= tol), f"{value:.2e}<={tol:.2g}"


# -- 1 ----------------------------------------------------------------------


def test_criterion_1_cofactor_piola():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    A = rng.standard_normal((1000, 3, 3))
    adj = np.abs(A @ np.swapaxes(cofactor(A), -1, -2) - np.linalg.det(A)[:, None, None] * np.eye(3)).max()

    res = {}
    for r in (16, 32):
        mesh, _ = generate_ball_in_box(1.0, 0.3, r)
        y = mesh.nodes
        M = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
        affine = piola_residual_p1(mesh, y @ M.T + 0.3)
        bump = np.prod(1 - y**2, axis=1)[:, None] * (np.linalg.norm(y, axis=1)[:, None] - 0.3)
        smooth = y + 0.05 * bump * np.sin(np.pi * y[:, [1, 2, 0]])
        res[r] = (affine, piola_residual_p1(mesh, smooth))
    coarse, fine = res[16][1], res[32][1]
    # O(h) decay; a residual already at roundoff satisfies any decay bound
    floor = 1e-12
    decay_ok = fine <= 0.5 * coarse or max(coarse, fine) <= floor
    checks = {
        "adjugate": _le(adj, 1e-12),
        "affine": _le(max(res[16][0], res[32][0]), 1e-12),
        "smooth_decay": (decay_ok, f"h16={coarse:.2e},h32={fine:.2e}"),
    }
    assert report(1, checks, time.perf_counter() - t0, 10.0)


# -- 2 ----------------------------------------------------------------------


def test_criterion_2_rotations():
    t0 = time.perf_counter()
    w = np.array([0.3, -1.1, 0.7])
    dt = 1e-3
    R = np.eye(3)
    for _ in range(100_000):
        R = integrate_rotation(R, w, dt)
    drift = np.abs(R.T @ R - np.eye(3)).max()
    # constant body rate: R(t) = exp(t S(w))
    closed = np.abs(R - rotation_exp(100.0 * w)).max()
    quarter = np.abs(rotation_exp((0, 0, np.pi / 2)) - np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])).max()
    checks = {
        "orthonormality": _le(drift, 1e-12),
        "closed_form": _le(max(closed, quarter), 1e-6),
    }
    assert report(2, checks, time.perf_counter() - t0, 5.0)


# -- 3 ----------------------------------------------------------------------


def test_criterion_3_projector():
    t0 = time.perf_counter()
    _, solid = generate_ball_in_box(1.0, 0.3, 12)
    rng = np.random.default_rng(3)
    wave = TravellingWaveFamily(1e-2, 1.0, 0.3)
    X, V = wave.position(solid.nodes, 0.8), wave.velocity(solid.nodes, 0.8)
    P = project_velocity(solid, 1.0, X, V)
    idem = np.abs(project_velocity(solid, 1.0, X, P) - P).max() / np.abs(P).max()
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    rigid = np.abs(project_velocity(solid, 1.0, X, a + np.cross(b, X))).max()
    worst = 0.0
    for fam in (DilationFamily(1e-2, 1.0), wave):
        d = project_deformation(RawDeformation(fam, solid, 1.0))
        for t in rng.uniform(0.0, 2.0, 50):
            flux, lin, ang = constraint_residuals(d, solid, t)
            worst = max(worst, abs(flux), np.abs(lin).max(), np.abs(ang).max())
    checks = {
        "idempotence": _le(idem, 1e-12),
        "rigid_annihilation": _le(rigid, 1e-12),
        "H2_H4_after_projection": _le(worst, 1e-10),
    }
    assert report(3, checks, time.perf_counter() - t0, 30.0)


# -- 4 ----------------------------------------------------------------------


def _first_step_ratio(space, deform, a, w, dt):
    ext = advance_extension(identity_extension(space), space, deform, RigidState.at_rest(), a, w, dt, 1e-10, 30)
    return max(ext.contraction_ratios), ext


def _horizon_ratio(space, deform, a, w, dt, horizon):
    ext, rigid = identity_extension(space), RigidState.at_rest()
    for _ in range(int(round(horizon / dt))):
        ext = advance_extension(ext, space, deform, rigid, a, w, dt, 1e-10, 30)
        rigid = RigidState.from_tilde(ext.h, ext.R, a, w)
    return max(ext.contraction_ratios)


def test_criterion_4_extension():
    t0 = time.perf_counter()
    cfg = SimConfig().with_values(
        geometry={"resolution": 12}, deformation={"family": "travelling_wave", "amplitude": 1e-2}
    )
    sim = Simulation(cfg)
    space = sim.space
    still = Simulation(cfg.with_values(deformation={"family": "none"}), mesh=sim.mesh, solid=sim.solid)
    zero = np.zeros(3)
    ident = advance_extension(identity_extension(space), space, still.deform, RigidState.at_rest(), zero, zero, 1e-2)
    ident_err = np.abs(ident.Xt - identity_extension(space).Xt).max()

    a, w = np.array([0.05, 0.0, 0.0]), np.array([0.0, 0.0, 0.1])
    tol_ext = cfg.tolerances.tol_ext
    rigid_ext = advance_extension(identity_extension(space), space, still.deform, RigidState.at_rest(), a, w, 1e-2, tol_ext)

    r1, _ = _first_step_ratio(space, sim.deform, a, w, 1e-2)
    r2, _ = _first_step_ratio(space, sim.deform, a, w, 5e-3)
    # reported only: over a fixed horizon the ratio follows |grad X - I|, not dt
    h1 = _horizon_ratio(space, sim.deform, a, w, 1e-2, 0.1)
    h2 = _horizon_ratio(space, sim.deform, a, w, 5e-3, 0.1)
    checks = {
        "identity_exact": _le(ident_err, 1e-13),
        "rigid_det_residual": _le(rigid_ext.det_residual, tol_ext),
        "contraction<1": (r1 < 1 and r2 < 1, f"dt=1e-2:{r1:.2e},dt=5e-3:{r2:.2e}"),
        "non_increasing_dt/2": (r2 <= r1, f"{r2:.2e}<={r1:.2e}"),
        "horizon_0.1(info)": (True, f"{h1:.2e}->{h2:.2e}"),
    }
    assert report(4, checks, time.perf_counter() - t0, 120.0)


# -- 5 ----------------------------------------------------------------------


def _rigid_decay(space, solid, dt, t_end):
    cs = CoupledSystem(space, solid, dt, 1.0, 1.0)
    m = space.mesh
    y = m.nodes[m.interface_nodes]
    z = np.array([0.1, 0.0, 0.0, 0.0, 0.0, 0.2])
    data = np.zeros((space.N, 3))
    data[m.interface_nodes] = z[:3] + np.cross(z[3:], y)
    U, _, _ = StokesSolver(space).solve(data)

    def energy(U, z):
        return 0.5 * U.ravel() @ (cs.mass_matrix @ U.ravel()) + 0.5 * z @ cs.gram0 @ z

    out = {}
    zeros_if = np.zeros((len(y), 3))
    for n in range(1, int(round(t_end / dt)) + 1):
        U1, _, z1, _, _ = cs.solve(U, z, np.zeros_like(U), np.zeros(space.N), np.zeros(6), zeros_if)
        E0, E1 = energy(U, z), energy(U1, z1)
        D = U1.ravel() @ (cs.stiffness @ U1.ravel())  # 2 nu |D u|^2
        out[round(n * dt, 10)] = (E0, E1, (E1 - E0) / dt + D)
        U, z = U1, z1
    return cs, out


def test_criterion_5_linear_solver():
    t0 = time.perf_counter()
    coarse_mesh, _ = generate_ball_in_box(1.0, 0.3, 8)
    mesh, solid = generate_ball_in_box(1.0, 0.3, 12)
    space = MiniSpace(mesh)
    e8 = manufactured_stokes(coarse_mesh)
    e12 = manufactured_stokes(mesh, space=space)
    cs, run1 = _rigid_decay(space, solid, 0.02, 0.2)
    _, run2 = _rigid_decay(space, solid, 0.01, 0.2)
    K = cs.full_matrix()
    sym = abs(K - K.T).max() / abs(K).max()
    Mob = cs.mobility()
    mob = np.abs(Mob - Mob.T).max() / np.abs(Mob).max()
    monotone = all(E1 <= E0 for E0, E1, _ in list(run1.values()) + list(run2.values()))
    ratios = [abs(run2[t][2]) / abs(run1[t][2]) for t in run1]
    checks = {
        "manufactured_decreasing": (
            e12["velocity_l2"] < e8["velocity_l2"] and e12["pressure_l2"] < e8["pressure_l2"],
            f"u {e8['velocity_l2']:.2e}->{e12['velocity_l2']:.2e}, p {e8['pressure_l2']:.2e}->{e12['pressure_l2']:.2e}",
        ),
        "matrix_symmetry": _le(sym, 1e-12),
        "mobility_symmetry": _le(mob, 1e-8),
        "pressure_mean": _le(abs(e12["pressure_mean"]), 1e-10),
        "energy_non_increasing": (monotone, f"{len(run1) + len(run2)} steps"),
        "balance_halves": (max(ratios) <= 0.5, f"max ratio {max(ratios):.2f}"),
    }
    assert report(5, checks, time.perf_counter() - t0, 300.0)


# -- 6 ----------------------------------------------------------------------


def test_criterion_6_nonlinear_stepper():
    t0 = time.perf_counter()
    base = SimConfig().with_values(geometry={"resolution": 12}, time={"dt": 0.01, "t_end": 0.2})
    rest = Simulation(base)
    s0 = rest.initial_state()
    s1, stats0, _ = rest.step(s0)
    zero_fp = max(np.abs(s1.U).max(), np.abs(s1.rigid_tilde).max())

    cfg = base.with_values(
        deformation={"family": "travelling_wave", "amplitude": 1e-2},
        initial={"u0": "stokes", "h1": (0.05, 0.0, 0.0), "omega0": (0.0, 0.0, 0.1)},
    )
    sim = Simulation(cfg, mesh=rest.mesh, solid=rest.solid)
    state = sim.initial_state()
    iters, last_ratio, bc = [], [], []
    for _ in range(20):
        state, stats, extras = sim.step(state)
        iters.append(stats.iterations if stats.converged else 10**6)
        last_ratio.append(stats.contraction_ratios[-1] if stats.contraction_ratios else 0.0)
        bc.append(extras.interface_bc_residual)
    x, u = to_physical(state, sim.mesh)
    X, Ut = from_physical(x, u, state.rigid)
    trip = max(np.abs(X - state.ext.nodal).max(), np.abs(Ut - state.U[: sim.mesh.n_nodes]).max())
    tol_bc = max(cfg.tolerances.tol_picard, 1e-8)
    checks = {
        "zero_fixed_point": (zero_fp == 0.0 and stats0.iterations == 1, f"{zero_fp:.1e}"),
        "picard<=10": (max(iters) <= 10, f"max {max(iters)} iterations"),
        "contraction<1": (max(last_ratio) < 1, f"max final ratio {max(last_ratio):.2e}"),
        "interface_bc": _le(max(bc), tol_bc),
        "round_trip": _le(trip, 1e-12),
    }
    assert report(6, checks, time.perf_counter() - t0, 600.0)


# -- 7 ----------------------------------------------------------------------


def _swimmer(resolution):
    cfg = SimConfig().with_values(
        geometry={"resolution": resolution},
        deformation={"family": "travelling_wave", "amplitude": 1e-2, "frequency": 1.0},
        time={"dt": 0.05, "t_end": 2.0},
    )
    return cfg, run_simulation(cfg)


def test_criterion_7_self_propulsion():
    t0 = time.perf_counter()
    cfg, fine = _swimmer(12)
    t_fine = time.perf_counter() - t0
    _, coarse = _swimmer(8)
    gap_fine = np.mean([r.momentum_gap for r in fine.records[1:]])
    gap_coarse = np.mean([r.momentum_gap for r in coarse.records[1:]])
    det = max(r.det_residual for r in fine.records)
    disp = fine.summary["displacement"]
    checks = {
        "completed": (fine.reason == "completed" and coarse.reason == "completed", f"{fine.reason}/{coarse.reason}"),
        "|h(T)|>0": (disp > 0, f"{disp:.3e}"),
        "momentum_gap_refines": (gap_fine < gap_coarse, f"mean res8 {gap_coarse:.2e} -> res12 {gap_fine:.2e}"),
        "det_residual": _le(det, cfg.tolerances.tol_ext),
        "res12_runtime<20min": (t_fine < 1200, f"{t_fine:.0f}s"),
    }
    assert report(7, checks, time.perf_counter() - t0, 1500.0)


# -- 8 ----------------------------------------------------------------------


def test_criterion_8_blowup_alternative():
    t0 = time.perf_counter()
    # heavy ball pushed toward the x wall; d_min sits inside the small-data
    # range of the fixed-reference Picard map
    approach = SimConfig().with_values(
        geometry={"resolution": 8},
        solid={"rho_s": 1000.0},
        initial={"u0": "stokes", "h1": (0.6, 0.0, 0.0)},
        time={"dt": 0.025, "t_end": 1.0},
        tolerances={"d_min": 0.67},
    )
    hit = run_simulation(approach)
    quiet = run_simulation(SimConfig().with_values(geometry={"resolution": 8}, time={"dt": 0.05, "t_end": 0.5}))
    dist = hit.records[-1].dist_to_wall
    checks = {
        "approach_contact": (hit.reason == "contact", f"{hit.reason} at t={hit.summary['t_final']:.3f}"),
        "dist<=d_min": _le(dist, approach.d_min),
        "quiescent_completed": (quiet.reason == "completed", quiet.reason),
    }
    assert report(8, checks, time.perf_counter() - t0, 300.0)


if __name__ == "__main__":  # pragma: no cover
    import sys

    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
