"""Picard time stepping of the coupled fluid / swimmer system.

Each implicit Euler step iterates: advance the extension map with the current
rigid velocity candidate, build the geometric right-hand sides, solve the
canonical coupled system.  Converged steps update the orientation and the
mass centre from the body-frame velocities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import SimConfig, as_vector, dump_config
from .errors import ExtensionDiverged, IncompatibleInitialData, PicardDiverged, SwimFSIError
from .extension import ExtensionMap, advance_extension, identity_extension, piola_residual
from .fe import MiniSpace
from .kinematics import (
    DeformationField,
    InertiaTensor,
    RawDeformation,
    RigidState,
    TabulatedFamily,
    constraint_residuals,
    inertia_from_nodal,
    make_family,
    project_deformation,
)
from .linsolve import CoupledSystem, StokesSolver
from .mesh import Mesh, SolidMesh, generate_ball_in_box, load_mesh, load_solid_mesh, solid_wall_distance
from .operators import TransformedOperator, build_coefficients


@dataclass(frozen=True, eq=False)
class CoupledState:
    t: float
    U: np.ndarray  # (nv, 3) body-frame velocity on the reference mesh
    P: np.ndarray  # (N,) pressure
    rigid: RigidState
    ext: ExtensionMap
    inertia: InertiaTensor
    multiplier: float = 0.0

    @property
    def rigid_tilde(self) -> np.ndarray:
        return np.r_[self.rigid.h_tilde_dot, self.rigid.omega_tilde]


@dataclass
class PicardStats:
    iterations: int = 0
    increments: list = field(default_factory=list)
    contraction_ratios: list = field(default_factory=list)
    converged: bool = False
    linear_residual: float = 0.0
    extension_iterations: int = 0
    delta: float = 0.0


@dataclass(frozen=True, eq=False)
class StepExtras:
    """Quantities of the converged step needed by the diagnostics."""

    reactions: np.ndarray
    wall_force: np.ndarray
    V_iface: np.ndarray
    X_iface: np.ndarray
    interface_bc_residual: float


def build_meshes(cfg: SimConfig) -> tuple[Mesh, SolidMesh]:
    g = cfg.geometry
    if g.mesh_path:
        mesh = load_mesh(g.mesh_path)
        return mesh, load_solid_mesh(g.solid_mesh_path, mesh)
    return generate_ball_in_box(g.box_half_width, g.ball_radius, g.resolution)


def build_deformation(cfg: SimConfig, solid: SolidMesh) -> DeformationField:
    d = cfg.deformation
    family = make_family(d.family, d.amplitude, d.frequency, cfg.geometry.ball_radius, d.path or None)
    if isinstance(family, TabulatedFamily) and family.positions.shape[1] != solid.n_nodes:
        from .errors import ConfigInvalid

        raise ConfigInvalid("tabulated deformation does not match the solid mesh", path=d.path)
    return project_deformation(RawDeformation(family, solid, cfg.solid.rho_s))


class Simulation:
    """Run context: meshes, spaces, factorised systems and the deformation."""

    def __init__(self, cfg: SimConfig, mesh: Mesh | None = None, solid: SolidMesh | None = None, deform: DeformationField | None = None):
        self.cfg = cfg.validated()
        if mesh is None or solid is None:
            mesh, solid = build_meshes(cfg)
        self.mesh, self.solid = mesh, solid
        self.space = MiniSpace(mesh)
        self.deform = deform if deform is not None else build_deformation(cfg, solid)
        nu, rho, dt = cfg.fluid.nu, cfg.solid.rho_s, cfg.time.dt
        self.system = CoupledSystem(self.space, solid, dt, nu, rho)
        self.op = TransformedOperator(self.space, solid, nu, rho, dt)
        self.norm_matrix = self.system.mass_matrix + self.system.stiffness
        self.box_half_width = float(np.abs(mesh.nodes).max())

    # -- state helpers ------------------------------------------------------
    def inertia_at(self, t: float) -> InertiaTensor:
        X, V = self.deform.evaluate(t)
        return inertia_from_nodal(self.solid, self.deform.rho_s, X, V, self.system.I0)

    def initial_state(self) -> CoupledState:
        cfg = self.cfg
        h1 = as_vector(cfg.initial.h1)
        w0 = as_vector(cfg.initial.omega0)
        sp_ = self.space
        m = self.mesh
        X0, V0 = self.deform.evaluate(0.0)
        iface = m.interface_nodes
        Xi, Vi = X0[self.solid.interface_nodes], V0[self.solid.interface_nodes]
        if cfg.initial.u0 == "zero":
            U = np.zeros((sp_.nv, 3))
        elif cfg.initial.u0 == "stokes":
            data = np.zeros((sp_.N, 3))
            data[iface] = h1 + np.cross(w0, Xi) + Vi
            U, _, _ = StokesSolver(sp_, cfg.fluid.nu).solve(data, compat_tol=np.inf)
        else:
            U = np.load(cfg.initial.u0_path)
            if U.shape == (sp_.N, 3):
                U = np.r_[U, np.zeros((sp_.E, 3))]
            if U.shape != (sp_.nv, 3):
                raise IncompatibleInitialData("u0 file has the wrong shape", shape=str(U.shape))
        report = validate_initial_velocity(sp_, U, h1, w0, offset=Vi + np.cross(w0, Xi - m.nodes[iface]))
        limit = 1e-8 if cfg.initial.u0 == "file" else 1e-8 * max(1.0, float(np.abs(U).max()))
        if max(report.values()) > limit:
            raise IncompatibleInitialData("initial velocity violates the compatibility conditions", **report)
        rigid = RigidState(np.zeros(3), h1, np.eye(3), w0)
        return CoupledState(0.0, U, np.zeros(sp_.N), rigid, identity_extension(sp_), self.inertia_at(0.0))

    # -- one step -----------------------------------------------------------
    def step(self, state: CoupledState) -> tuple[CoupledState, PicardStats, StepExtras]:
        cfg = self.cfg
        tol = cfg.tolerances
        dt = cfg.time.dt
        t = state.t + dt
        sp_ = self.space
        m = self.mesh
        Xs, Vs = self.deform.evaluate(t)
        X_if = Xs[self.solid.interface_nodes]
        V_if = Vs[self.solid.interface_nodes]
        inert = inertia_from_nodal(self.solid, self.deform.rho_s, Xs, Vs, self.system.I0)
        z_prev = state.rigid_tilde
        U, P, z = state.U, state.P, z_prev.copy()
        stats = PicardStats()
        growing = 0
        ext = state.ext
        lam, lin_res = state.multiplier, 0.0
        for k in range(tol.max_picard):
            guess = None if k == 0 else ext
            ext = advance_extension(state.ext, sp_, self.deform, state.rigid, z[:3], z[3:], dt, tol.tol_ext, tol.max_ext_iter, guess)
            coeffs = build_coefficients(ext, z[:3], z[3:], sp_)
            rhs = self.op.rhs(U, P, z, state.U, z_prev, coeffs, X_if, V_if, Xs, inert)
            U1, P1, z1, lam, lin_res = self.system.solve(state.U, z_prev, rhs.F_vol, rhs.F_p, np.r_[rhs.F_M, rhs.F_I], rhs.W_bnd)
            if tol.theta < 1.0:
                th = tol.theta
                U1, P1, z1 = U + th * (U1 - U), P + th * (P1 - P), z + th * (z1 - z)
            inc = self._norm(U1 - U) + float(np.linalg.norm(z1 - z))
            scale = self._norm(U1) + float(np.linalg.norm(z1))
            stats.increments.append(inc)
            stats.extension_iterations += ext.iterations
            stats.delta = rhs.delta
            U, P, z = U1, P1, z1
            stats.iterations = k + 1
            if len(stats.increments) > 1 and stats.increments[-2] > 0:
                stats.contraction_ratios.append(inc / stats.increments[-2])
            if inc <= max(tol.tol_picard * scale, 1e-14):
                stats.converged = True
                break
            if len(stats.increments) > 1 and inc > stats.increments[-2]:
                growing += 1
                if growing >= 5:
                    raise PicardDiverged("Picard increments grew for 5 iterations", t=t, increments=stats.increments)
            else:
                growing = 0
        stats.linear_residual = lin_res
        # end-of-step quantities at the accepted iterate
        coeffs = build_coefficients(ext, z[:3], z[3:], sp_)
        residual, _ = self.op.momentum_residual(U, P, state.U, coeffs)
        target = z[:3] + np.cross(z[3:], X_if) + V_if
        bc = float(np.max(np.abs(U[m.interface_nodes] - target))) if len(X_if) else 0.0
        R, h = ext.R, ext.h
        rigid = RigidState.from_tilde(h, R, z[:3], z[3:])
        new = CoupledState(t, U, P, rigid, ext, inert, lam)
        extras = StepExtras(residual[m.interface_nodes], residual[m.wall_nodes].sum(axis=0), V_if, X_if, bc)
        return new, stats, extras

    def _norm(self, dU: np.ndarray) -> float:
        v = dU.ravel()
        return math.sqrt(max(float(v @ (self.norm_matrix @ v)), 0.0))

    # -- output -------------------------------------------------------------
    def wall_distance(self, state: CoupledState) -> float:
        return solid_wall_distance(self.mesh, state.rigid, self.deform, state.t, self.box_half_width)


def validate_initial_velocity(space: MiniSpace, U: np.ndarray, h1, omega0, offset=None) -> dict:
    """Weak divergence, wall trace and interface mismatch against h1 + omega0 ^ y.

    ``offset`` (per interface node) adds the deformation velocity when the
    initial deformation is not the identity."""
    m = space.mesh
    div = space.divergence_matrix() @ U.ravel()
    scale = np.sqrt(space.pressure_mass_vector())
    y = m.nodes[m.interface_nodes]
    target = np.asarray(h1, dtype=float) + np.cross(np.asarray(omega0, dtype=float), y)
    if offset is not None:
        target = target + offset
    return {
        "divergence": float(np.linalg.norm(div / scale)),
        "wall_trace": float(np.abs(U[m.wall_nodes]).max()) if len(m.wall_nodes) else 0.0,
        "interface_mismatch": float(np.abs(U[m.interface_nodes] - target).max()) if len(y) else 0.0,
    }


def fixed_point_step(state: CoupledState, deform: DeformationField, cfg: SimConfig, sim: Simulation | None = None):
    """One Picard-converged implicit Euler step; returns (state, stats)."""
    if sim is None or sim.deform is not deform:
        sim = Simulation(cfg, deform=deform, solid=deform.solid, mesh=None if sim is None else sim.mesh)
    new, stats, _ = sim.step(state)
    return new, stats


# -- frame changes ---------------------------------------------------------


def to_physical(state: CoupledState, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Physical node positions x = h + R X~(y) and velocities u(x) = R u~(y)."""
    R, h = state.rigid.R, state.rigid.h
    N = mesh.n_nodes
    x = h + state.ext.Xt[:N] @ R.T
    u = state.U[:N] @ R.T
    return x, u


def from_physical(x: np.ndarray, u: np.ndarray, rigid: RigidState) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of ``to_physical``: returns (X~ nodal, u~ nodal)."""
    R, h = rigid.R, rigid.h
    return (x - h) @ R, u @ R


# -- VTK snapshots ---------------------------------------------------------


def write_vtk(path, state: CoupledState, mesh: Mesh) -> None:
    x, u = to_physical(state, mesh)
    N = mesh.n_nodes
    disp = state.ext.Xt[:N] - mesh.nodes
    det = state.ext.det_grad_Xt.mean(axis=1)
    out = ["# vtk DataFile Version 3.0", f"swimfsi t={state.t:.17g}", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {N} double")
    out += [f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in x]
    E = mesh.n_elements
    out.append(f"CELLS {E} {5 * E}")
    out += [f"4 {a} {b} {c} {d}" for a, b, c, d in mesh.tets]
    out.append(f"CELL_TYPES {E}")
    out += ["10"] * E
    out.append(f"POINT_DATA {N}")
    out.append("VECTORS velocity double")
    out += [f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in u]
    out += ["SCALARS pressure double 1", "LOOKUP_TABLE default"]
    out += [f"{p:.17g}" for p in state.P]
    out.append("VECTORS displacement double")
    out += [f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in disp]
    out.append(f"CELL_DATA {E}")
    out += ["SCALARS det_grad_Xt double 1", "LOOKUP_TABLE default"]
    out += [f"{v:.17g}" for v in det]
    Path(path).write_text("\n".join(out) + "\n")


# -- full runs -------------------------------------------------------------


@dataclass
class RunResult:
    records: list
    reason: str
    summary: dict
    final: CoupledState
    snapshots: list
    stats: list


def run_simulation(cfg: SimConfig, deform: DeformationField | None = None, sim: Simulation | None = None, out_dir=None, config_text: str | None = None, log=None) -> RunResult:
    """Step from 0 to t_end; stop early on contact or a diverged iteration."""
    sim = sim or Simulation(cfg, deform=deform, solid=None if deform is None else deform.solid)
    cfg = sim.cfg
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.echo").write_text(config_text if config_text is not None else dump_config(cfg))
    state = sim.initial_state()
    tracker = diag.Tracker(sim)
    records = [tracker.initial(state)]
    snapshots, all_stats = [], []
    n_steps = int(round(cfg.time.t_end / cfg.time.dt))
    reason = "completed"
    failure = None
    if records[0].dist_to_wall < cfg.d_min:
        reason = "contact"
        n_steps = 0
    for n in range(1, n_steps + 1):
        try:
            new, stats, extras = sim.step(state)
        except PicardDiverged as exc:
            reason, failure = "picard_diverged", exc.to_dict()
            break
        except ExtensionDiverged as exc:
            reason, failure = "extension_diverged", exc.to_dict()
            break
        except SwimFSIError as exc:
            exc.details.setdefault("t", state.t + cfg.time.dt)
            raise
        rec = tracker.record(state, new, stats, extras)
        records.append(rec)
        all_stats.append(stats)
        state = new
        if log is not None:
            log(f"t={new.t:.6g} picard={stats.iterations} dist={rec.dist_to_wall:.4g} E={rec.kinetic_energy:.6g}")
        if cfg.time.snapshot_every and n % cfg.time.snapshot_every == 0:
            snapshots.append(n)
            if out is not None:
                write_vtk(out / f"step_{n:06d}.vtk", state, sim.mesh)
        if rec.dist_to_wall < cfg.d_min:
            reason = "contact"
            break
    summary = {
        "reason": reason,
        "t_final": state.t,
        "steps": len(records) - 1,
        "h_final": [float(v) for v in state.rigid.h],
        "displacement": float(np.linalg.norm(state.rigid.h)),
        "max_energy": max(r.kinetic_energy for r in records),
        "total_dissipation": float(sum(r.dissipation for r in records[1:]) * cfg.time.dt),
        "max_det_residual": max(r.det_residual for r in records),
        "min_dist_to_wall": min(r.dist_to_wall for r in records),
        "d_min": cfg.d_min,
    }
    if failure is not None:
        summary["failure"] = failure
    if out is not None:
        diag.write_csv(out / "diagnostics.csv", records)
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return RunResult(records, reason, summary, state, snapshots, all_stats)
