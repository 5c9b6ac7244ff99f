"""Energy, momentum and constraint bookkeeping for accepted time steps."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import TYPE_CHECKING

import numpy as np

from .extension import piola_residual
from .kinematics import constraint_residuals

if TYPE_CHECKING:  # pragma: no cover
    from .stepper import CoupledState, PicardStats, Simulation, StepExtras


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    h_x: float
    h_y: float
    h_z: float
    h_dot_x: float
    h_dot_y: float
    h_dot_z: float
    omega_x: float
    omega_y: float
    omega_z: float
    kinetic_energy: float
    dissipation: float
    energy_residual: float
    deformation_power: float
    h2_residual: float
    h3_residual: float
    h4_residual: float
    det_residual: float
    det_residual_max: float
    piola_residual: float
    interface_bc_residual: float
    dist_to_wall: float
    momentum_gap: float
    picard_iterations: int
    picard_converged: int
    extension_iterations: int
    linear_residual: float
    flux_mismatch: float


COLUMNS = tuple(f.name for f in fields(DiagnosticsRecord))


def kinetic_energy(state: "CoupledState", mass_matrix, solid_mass: float) -> float:
    """1/2 |u~|^2 over the fluid + 1/2 M |h~'|^2 + 1/2 I* w~ . w~."""
    u = state.U.ravel()
    a = state.rigid.h_tilde_dot
    b = state.rigid.omega_tilde
    return float(0.5 * u @ (mass_matrix @ u) + 0.5 * solid_mass * a @ a + 0.5 * b @ (state.inertia.I_star @ b))


def dissipation(state: "CoupledState", space, nu: float) -> float:
    """2 nu |D(u)|^2 with the strain taken in physical coordinates."""
    gUB = space.grads(state.U) @ state.ext.grad_Y_of_X
    S = gUB + np.swapaxes(gUB, -1, -2)
    return float(0.5 * nu * np.sum(space.w * np.einsum("eqij,eqij->eq", S, S)))


def energy_report(prev: "CoupledState", new: "CoupledState", nu: float, dt: float, sim: "Simulation", extras: "StepExtras | None" = None):
    """(E, D, residual) with residual = (E_n - E_{n-1})/dt + D + 1/2 I*' w~.w~ - P_def.

    P_def is the work of the interface reactions on the deformation velocity.
    For implicit Euler the residual is non-positive up to the Picard tolerance."""
    M = sim.system.mass_matrix
    m_s = sim.op.mass
    E0 = kinetic_energy(prev, M, m_s)
    E1 = kinetic_energy(new, M, m_s)
    D = dissipation(new, sim.space, nu)
    b = new.rigid.omega_tilde
    power = 0.0
    if extras is not None and len(extras.V_iface):
        power = float(np.sum(extras.reactions * extras.V_iface))
    res = (E1 - E0) / dt + D + 0.5 * b @ (new.inertia.I_star_dot @ b) - power
    return E1, D, float(res), power


def total_momentum(state: "CoupledState", mass_matrix, solid_mass: float) -> np.ndarray:
    """Physical-frame momentum of fluid plus solid."""
    N = state.ext.grad_Xt.shape[0]
    MU = (mass_matrix @ state.U.ravel()).reshape(-1, 3)
    n_nodes = state.U.shape[0] - N
    fluid = MU[:n_nodes].sum(axis=0)
    return state.rigid.R @ (fluid + solid_mass * state.rigid.h_tilde_dot)


def momentum_report(prev: "CoupledState", new: "CoupledState", dt: float, sim: "Simulation", extras: "StepExtras"):
    """(dP/dt, wall force, gap) in the physical frame; the wall force is the
    sum of the transformed momentum residual over outer-wall rows."""
    M = sim.system.mass_matrix
    dP = (total_momentum(new, M, sim.op.mass) - total_momentum(prev, M, sim.op.mass)) / dt
    wall = new.rigid.R @ extras.wall_force
    return dP, wall, float(np.linalg.norm(dP - wall))


class Tracker:
    """Builds one DiagnosticsRecord per accepted step."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim

    def _constraints(self, t: float):
        try:
            flux, lin, ang = constraint_residuals(self.sim.deform, self.sim.solid, t)
        except Exception:  # H1 failure is reported as non-finite residuals
            return float("nan"), float("nan"), float("nan")
        return abs(flux), float(np.linalg.norm(lin)), float(np.linalg.norm(ang))

    def _base(self, state: "CoupledState") -> dict:
        sim = self.sim
        r = state.rigid
        h2, h3, h4 = self._constraints(state.t)
        return dict(
            t=state.t,
            h_x=r.h[0], h_y=r.h[1], h_z=r.h[2],
            h_dot_x=r.h_dot[0], h_dot_y=r.h_dot[1], h_dot_z=r.h_dot[2],
            omega_x=r.omega[0], omega_y=r.omega[1], omega_z=r.omega[2],
            kinetic_energy=kinetic_energy(state, sim.system.mass_matrix, sim.op.mass),
            dissipation=dissipation(state, sim.space, sim.cfg.fluid.nu),
            h2_residual=h2, h3_residual=h3, h4_residual=h4,
            det_residual=state.ext.det_residual,
            det_residual_max=state.ext.det_residual_max,
            piola_residual=piola_residual(state.ext, sim.space),
            dist_to_wall=sim.wall_distance(state),
        )

    def initial(self, state: "CoupledState") -> DiagnosticsRecord:
        base = self._base(state)
        return DiagnosticsRecord(
            **base,
            energy_residual=0.0,
            deformation_power=0.0,
            interface_bc_residual=0.0,
            momentum_gap=0.0,
            picard_iterations=0,
            picard_converged=1,
            extension_iterations=0,
            linear_residual=0.0,
            flux_mismatch=0.0,
        )

    def record(self, prev, new, stats: "PicardStats", extras: "StepExtras") -> DiagnosticsRecord:
        sim = self.sim
        dt = sim.cfg.time.dt
        base = self._base(new)
        _, _, res, power = energy_report(prev, new, sim.cfg.fluid.nu, dt, sim, extras)
        _, _, gap = momentum_report(prev, new, dt, sim, extras)
        return DiagnosticsRecord(
            **base,
            energy_residual=res,
            deformation_power=power,
            interface_bc_residual=extras.interface_bc_residual,
            momentum_gap=gap,
            picard_iterations=stats.iterations,
            picard_converged=int(stats.converged),
            extension_iterations=stats.extension_iterations,
            linear_residual=stats.linear_residual,
            flux_mismatch=stats.delta,
        )


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in records:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in COLUMNS])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
