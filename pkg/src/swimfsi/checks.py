"""Built-in property checks run by ``swimfsi verify``.

Each check returns a measured value and the tolerance it must meet; the
suite shares one mesh and one simulation context to stay fast.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import SimConfig, dump_config, parse_config
from .extension import cofactor, identity_extension, piola_residual_p1
from .kinematics import (
    DilationFamily,
    RawDeformation,
    TravellingWaveFamily,
    constraint_residuals,
    integrate_rotation,
    project_deformation,
    project_velocity,
    rotation_exp,
)
from .linsolve import manufactured_stokes
from .mesh import generate_ball_in_box
from .stepper import Simulation, from_physical, to_physical, validate_initial_velocity


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool
    seconds: float


class Context:
    """Lazily built shared objects for one resolution."""

    def __init__(self, resolution: int = 12, seed: int = 0):
        self.resolution = resolution
        self.rng = np.random.default_rng(seed)
        self._sim = None

    @property
    def sim(self) -> Simulation:
        if self._sim is None:
            cfg = SimConfig().with_values(geometry={"resolution": self.resolution})
            self._sim = Simulation(cfg)
        return self._sim


def adjugate_identity(ctx: Context) -> float:
    A = ctx.rng.standard_normal((1000, 3, 3))
    lhs = np.swapaxes(cofactor(A), -1, -2) @ A
    det = np.linalg.det(A)
    return float(np.max(np.abs(lhs - det[:, None, None] * np.eye(3)) / np.maximum(1.0, np.abs(det))[:, None, None]))


def rotation_drift(ctx: Context, steps: int = 100_000) -> float:
    R = np.eye(3)
    w = ctx.rng.standard_normal(3)
    for _ in range(steps):
        R = integrate_rotation(R, w, 1e-3)
    return float(np.abs(R.T @ R - np.eye(3)).max())


def rotation_closed_form(ctx: Context) -> float:
    Rz = rotation_exp((0.0, 0.0, np.pi / 2))
    exact = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    Rx = rotation_exp((np.pi, 0.0, 0.0))
    return float(max(np.abs(Rz - exact).max(), np.abs(Rx - np.diag([1.0, -1.0, -1.0])).max()))


def _wave_velocity(ctx: Context):
    solid = ctx.sim.solid
    fam = TravellingWaveFamily(0.05, 1.0, ctx.sim.cfg.geometry.ball_radius)
    X = fam.position(solid.nodes, 0.7)
    V = fam.velocity(solid.nodes, 0.7)
    return solid, X, V


def projector_idempotence(ctx: Context) -> float:
    solid, X, V = _wave_velocity(ctx)
    P1 = project_velocity(solid, 1.0, X, V)
    P2 = project_velocity(solid, 1.0, X, P1)
    return float(np.abs(P2 - P1).max() / max(np.abs(P1).max(), 1e-300))


def projector_rigid(ctx: Context) -> float:
    solid, X, _ = _wave_velocity(ctx)
    a, b = ctx.rng.standard_normal(3), ctx.rng.standard_normal(3)
    return float(np.abs(project_velocity(solid, 1.0, X, a + np.cross(b, X))).max())


def projected_constraints(ctx: Context, n_times: int = 10) -> float:
    solid = ctx.sim.solid
    r = ctx.sim.cfg.geometry.ball_radius
    worst = 0.0
    for fam in (DilationFamily(0.05, 1.0), TravellingWaveFamily(0.05, 1.0, r)):
        d = project_deformation(RawDeformation(fam, solid, 1.0))
        for t in ctx.rng.uniform(0.0, 2.0, n_times):
            flux, lin, ang = constraint_residuals(d, solid, t)
            worst = max(worst, abs(flux), float(np.abs(lin).max()), float(np.abs(ang).max()))
    return worst


def interface_pairing(ctx: Context) -> float:
    m, s = ctx.sim.mesh, ctx.sim.solid
    return float(np.abs(m.nodes[m.interface_nodes] - s.nodes[s.interface_nodes]).max())


def fluid_volume(ctx: Context) -> float:
    g = ctx.sim.cfg.geometry
    exact = (2 * g.box_half_width) ** 3 - 4.0 / 3.0 * np.pi * g.ball_radius**3
    return abs(ctx.sim.mesh.total_volume - exact) / exact


def piola_affine(ctx: Context) -> float:
    m = ctx.sim.mesh
    A = np.eye(3) + 0.1 * ctx.rng.standard_normal((3, 3))
    return piola_residual_p1(m, m.nodes @ A.T + ctx.rng.standard_normal(3))


def extension_identity(ctx: Context) -> float:
    ext = identity_extension(ctx.sim.space)
    return float(max(ext.det_residual_max, np.abs(ext.grad_Y_of_X - np.eye(3)).max()))


def matrix_symmetry(ctx: Context) -> float:
    K = ctx.sim.system.full_matrix()
    return float(abs(K - K.T).max() / abs(K).max())


def mobility_symmetry(ctx: Context) -> float:
    Mob = ctx.sim.system.mobility()
    return float(np.abs(Mob - Mob.T).max() / np.abs(Mob).max())


def stokes_pressure_mean(ctx: Context) -> float:
    return abs(manufactured_stokes(ctx.sim.mesh, space=ctx.sim.space)["pressure_mean"])


def initial_zero(ctx: Context) -> float:
    sp_ = ctx.sim.space
    return max(validate_initial_velocity(sp_, np.zeros((sp_.nv, 3)), np.zeros(3), np.zeros(3)).values())


def initial_constant_rejected(ctx: Context) -> float:
    """Wall trace of a constant field; must be large, reported as its negative margin."""
    sp_ = ctx.sim.space
    U = np.ones((sp_.nv, 3))
    return 1e-8 / validate_initial_velocity(sp_, U, np.ones(3), np.zeros(3))["wall_trace"]


def zero_fixed_point(ctx: Context) -> float:
    sim = ctx.sim
    state = sim.initial_state()
    new, stats, _ = sim.step(state)
    return float(max(np.abs(new.U).max(), np.abs(new.rigid_tilde).max(), np.abs(new.rigid.h).max()))


def frame_round_trip(ctx: Context) -> float:
    sim = ctx.sim
    state = sim.initial_state()
    R = rotation_exp(ctx.rng.standard_normal(3))
    from .kinematics import RigidState

    rigid = RigidState(ctx.rng.standard_normal(3), np.zeros(3), R, np.zeros(3))
    U = ctx.rng.standard_normal(state.U.shape)
    st = type(state)(state.t, U, state.P, rigid, state.ext, state.inertia, state.multiplier)
    x, u = to_physical(st, sim.mesh)
    X, Ut = from_physical(x, u, rigid)
    N = sim.mesh.n_nodes
    return float(max(np.abs(X - sim.mesh.nodes).max(), np.abs(Ut - U[:N]).max()))


def config_round_trip(ctx: Context) -> float:
    cfg = SimConfig().with_values(deformation={"family": "dilation", "amplitude": 0.01}, initial={"h1": (0.1, 0.0, -0.2)})
    return 0.0 if parse_config(dump_config(cfg)) == cfg else 1.0


def stokes_convergence(ctx: Context) -> float:
    """Ratio of fine to coarse velocity error between resolutions 8 and 12."""
    e = [manufactured_stokes(generate_ball_in_box(1.0, 0.3, r)[0])["velocity_l2"] for r in (8, 12)]
    return e[1] / e[0]


CHECKS: list[tuple[str, Callable[[Context], float], float]] = [
    ("adjugate identity", adjugate_identity, 1e-12),
    ("rotation orthonormality drift", rotation_drift, 1e-12),
    ("rotation closed form", rotation_closed_form, 1e-12),
    ("projector idempotence", projector_idempotence, 1e-12),
    ("projector annihilates rigid fields", projector_rigid, 1e-12),
    ("projected H2-H4 residuals", projected_constraints, 1e-10),
    ("interface node pairing", interface_pairing, 1e-14),
    ("fluid volume (relative)", fluid_volume, 0.05),
    ("Piola residual, affine map", piola_affine, 1e-12),
    ("extension identity", extension_identity, 1e-14),
    ("coupled matrix symmetry", matrix_symmetry, 1e-12),
    ("mobility symmetry", mobility_symmetry, 1e-8),
    ("Stokes pressure mean", stokes_pressure_mean, 1e-10),
    ("Stokes error ratio 12/8", stokes_convergence, 1.0),
    ("zero initial data accepted", initial_zero, 1e-14),
    ("constant initial data rejected", initial_constant_rejected, 1.0),
    ("zero fixed point", zero_fixed_point, 1e-14),
    ("physical/tilde round trip", frame_round_trip, 1e-12),
    ("config round trip", config_round_trip, 0.5),
]


def run_checks(resolution: int = 12, seed: int = 0, names=None, log=None) -> list[CheckResult]:
    ctx = Context(resolution, seed)
    out = []
    for name, fn, tol in CHECKS:
        if names is not None and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            value = float(fn(ctx))
        except Exception as exc:  # a crashing check is a failed check
            value = float("nan")
            if log is not None:
                log(f"{name}: {type(exc).__name__}: {exc}")
        res = CheckResult(name, value, tol, bool(value <= tol), time.perf_counter() - t0)
        out.append(res)
        if log is not None:
            log(format_result(res))
    return out


def format_result(r: CheckResult) -> str:
    return f"{'PASS' if r.passed else 'FAIL'}  {r.name:<36s} {r.value:11.3e} <= {r.tol:.1e}  ({r.seconds:.1f} s)"
