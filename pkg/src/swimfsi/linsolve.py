"""Canonical linear solvers on the reference fluid mesh.

``StokesSolver`` handles the steady problem with Dirichlet data on the whole
boundary and a prescribed divergence.  ``CoupledSystem`` is the implicit
Euler step of the unsteady problem coupled to the six rigid velocities: the
velocity space is constrained to u = a + b ^ y + W on the interface and the
test functions are rigid there, so the solid's Newton laws come out of the
weak form without explicit stress integrals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CompatibilityViolation
from .fe import CondensedSaddle, MiniSpace
from .kinematics import _rigid_gram, skew
from .mesh import SOLID, Mesh, SolidMesh


def _quad_rhs(space: MiniSpace, force):
    if force is None:
        return np.zeros((space.nv, 3))
    if callable(force):
        force = force(space.mesh.quad_points())
    return space.integrate_velocity(f=force)


def boundary_flux(space: MiniSpace, nodal: np.ndarray) -> float:
    """Integral of v . n over the whole fluid boundary (n out of the fluid), v P1."""
    m = space.mesh
    return float(np.einsum("ki,ki,k->", nodal[m.facets].mean(axis=1), m.facet_normals, m.facet_areas))


class StokesSolver:
    """-nu Lap u + grad p = f, div u = g, u given on the boundary, mean(p) = 0."""

    def __init__(self, space: MiniSpace, nu: float = 1.0):
        self.space = space
        self.nu = float(nu)
        sysm = CondensedSaddle(space, self.nu * space.element_laplacian())
        N = space.N
        m = space.mesh
        free = np.ones(N, dtype=bool)
        free[m.boundary_nodes] = False
        vel = np.flatnonzero(np.repeat(free, 3))
        keep = np.r_[vel, 3 * N + np.arange(N), sysm.n_red]
        T = sp.csr_matrix((np.ones(len(keep)), (keep, np.arange(len(keep)))), shape=(sysm.n_ext, len(keep)))
        sysm.set_map(T)
        self.system = sysm
        self.volume = m.total_volume

    def solve(self, dirichlet: np.ndarray, div_data=None, force=None, compat_tol: float = 1e-6):
        """dirichlet: (N, 3) nodal values (only boundary rows are read);
        div_data: (E, Q) values at quadrature points.  Returns (U, P, info)."""
        sp_ = self.space
        N = sp_.N
        m = sp_.mesh
        bvals = np.zeros((N, 3))
        bvals[m.boundary_nodes] = np.asarray(dirichlet)[m.boundary_nodes]
        g = np.zeros((sp_.E, sp_.nq)) if div_data is None else np.array(div_data, dtype=float)
        flux = boundary_flux(sp_, bvals)
        mismatch = flux - float(np.sum(sp_.w * g))
        scale = max(abs(flux), float(np.sum(sp_.w * np.abs(g))), 1e-300)
        if abs(mismatch) > compat_tol * scale and abs(mismatch) > 1e-14 * self.volume:
            raise CompatibilityViolation("boundary flux and divergence data disagree", mismatch=mismatch)
        g = g + mismatch / self.volume
        f_vel = _quad_rhs(sp_, force)
        f_p = -sp_.integrate_pressure(s=g)
        f = self.system.condense(f_vel, f_p)
        lift = np.zeros(self.system.n_ext)
        lift[: 3 * N] = bvals.ravel()
        x, res = self.system.solve(f, lift)
        U, P, extra = self.system.expand(x, f_vel)
        return U, P, {"compat_mismatch": mismatch, "linear_residual": res, "multiplier": float(extra[-1])}


def solve_steady_stokes(mesh: Mesh, dirichlet, div_data=None, rhs=None, nu: float = 1.0, space: MiniSpace | None = None):
    """Standalone steady Stokes solve; ``dirichlet`` is (N, 3) nodal or a callable of position."""
    space = space or MiniSpace(mesh)
    if callable(dirichlet):
        dirichlet = dirichlet(mesh.nodes)
    U, P, _ = StokesSolver(space, nu).solve(dirichlet, div_data, rhs)
    return U, P


def interface_traction(space: MiniSpace, U: np.ndarray, P: np.ndarray, nu: float) -> np.ndarray:
    """Force of the fluid on the solid, -int sigma n over the interface (n into the solid)."""
    fd = space.facet_data(SOLID)
    own = fd["owner"]
    Ue = U[space.loc[own]]  # (K, 5, 3)
    grad = np.einsum("kab,kqaj->kqbj", Ue, fd["dphi"])
    p = np.einsum("kqa,ka->kq", fd["bary"], P[space.mesh.tets[own]])
    sig = nu * (grad + np.swapaxes(grad, 2, 3)) - p[..., None, None] * np.eye(3)
    return -np.einsum("kq,kqij,kj->i", fd["w"], sig, fd["normal"])


# ---------------------------------------------------------------------------
# coupled fluid / rigid system


@dataclass
class FluidState:
    U: np.ndarray  # (nv, 3) velocity, P1 nodes then bubbles
    P: np.ndarray  # (N,) pressure

    @classmethod
    def zeros(cls, space: MiniSpace) -> "FluidState":
        return cls(np.zeros((space.nv, 3)), np.zeros(space.N))


class CoupledSystem:
    """Implicit Euler matrix for (velocity, pressure, h~', w~, pressure multiplier)."""

    def __init__(self, space: MiniSpace, solid: SolidMesh, dt: float, nu: float, rho_s: float):
        self.space = space
        self.solid = solid
        self.dt, self.nu, self.rho_s = float(dt), float(nu), float(rho_s)
        self.A_loc = space.element_mass() / dt + nu * space.element_symgrad()
        self.gram0 = _rigid_gram(solid, rho_s, solid.nodes)
        self.mass = rho_s * solid.total_volume
        self.I0 = self.gram0[3:, 3:].copy()
        sysm = CondensedSaddle(space, self.A_loc, extra_block=self.gram0 / dt)
        m = space.mesh
        N = space.N
        iface = m.interface_nodes
        interior = m.interior_nodes
        n_int = 3 * len(interior)
        nz = n_int + N + 6 + 1
        rows, cols, vals = [], [], []
        vel_int = (3 * interior[:, None] + np.arange(3)).ravel()
        rows.append(vel_int)
        cols.append(np.arange(n_int))
        vals.append(np.ones(n_int))
        rows.append(3 * N + np.arange(N))
        cols.append(n_int + np.arange(N))
        vals.append(np.ones(N))
        ra = n_int + N  # rigid columns in z
        for j in range(6):
            rows.append(np.array([sysm.n_red + j]))
            cols.append(np.array([ra + j]))
            vals.append(np.ones(1))
        # interface: u_i = a - S(y_i) b
        y = m.nodes[iface]
        for k in range(3):
            rows.append(3 * iface + k)
            cols.append(np.full(len(iface), ra + k))
            vals.append(np.ones(len(iface)))
            Sy = np.stack([skew(p) for p in y]) if len(y) else np.zeros((0, 3, 3))
            for l in range(3):
                rows.append(3 * iface + k)
                cols.append(np.full(len(iface), ra + 3 + l))
                vals.append(-Sy[:, k, l])
        rows.append(np.array([sysm.n_ext - 1]))
        cols.append(np.array([nz - 1]))
        vals.append(np.ones(1))
        T = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(sysm.n_ext, nz))
        sysm.set_map(T)
        self.system = sysm
        self.n_int = n_int
        self.mass_matrix = space.velocity_matrix(space.element_mass())
        self.stiffness = space.velocity_matrix(space.element_symgrad())
        self.divergence = space.divergence_matrix()

    def full_matrix(self) -> sp.csr_matrix:
        """Uncondensed symmetric matrix over (velocity, pressure, rigid, multiplier)."""
        A = self.mass_matrix / self.dt + self.nu * self.stiffness
        B = self.divergence
        m = self.system.pmass[:, None]
        return sp.bmat(
            [
                [A, -B.T, None, None],
                [-B, None, None, sp.csr_matrix(m)],
                [None, None, sp.csr_matrix(self.gram0 / self.dt), None],
                [None, sp.csr_matrix(m.T), None, None],
            ],
            format="csr",
        )

    def mobility(self) -> np.ndarray:
        """6x6 map from unit rigid loads to (h~', w~) for one step, zero other data."""
        out = np.zeros((6, 6))
        s = self.system
        for j in range(6):
            f = np.zeros(s.n_ext)
            f[s.n_red + j] = 1.0
            x, _ = s.solve(f, np.zeros(s.n_ext))
            out[:, j] = x[s.n_red : s.n_red + 6]
        return out

    def solve(self, U_prev, rigid_prev, F_vel, F_p, F_rig, W_iface):
        """One linear solve.  Loads are residual-form right-hand sides (the
        canonical implicit Euler history terms are added here)."""
        space = self.space
        N = space.N
        f_vel = (self.mass_matrix @ U_prev.ravel()).reshape(-1, 3) / self.dt + F_vel
        f_rig = self.gram0 @ rigid_prev / self.dt + F_rig
        f = self.system.condense(f_vel, F_p, f_rig)
        lift = np.zeros(self.system.n_ext)
        iface = space.mesh.interface_nodes
        lift[(3 * iface[:, None] + np.arange(3)).ravel()] = W_iface.ravel()
        x, res = self.system.solve(f, lift)
        U, P, extra = self.system.expand(x, f_vel)
        return U, P, extra[:6], float(extra[6]), res


# ---------------------------------------------------------------------------
# manufactured solution


def manufactured_fields(nu: float = 1.0):
    """Divergence-free u = (sin pi y, sin pi z, sin pi x), p = xyz and the
    matching load f = nu pi^2 u + grad p, as callables of position."""

    def u(x):
        return np.sin(np.pi * x[..., [1, 2, 0]])

    def p(x):
        return x[..., 0] * x[..., 1] * x[..., 2]

    def f(x):
        gp = np.stack([x[..., 1] * x[..., 2], x[..., 0] * x[..., 2], x[..., 0] * x[..., 1]], axis=-1)
        return nu * np.pi**2 * u(x) + gp

    return u, p, f


def manufactured_stokes(mesh: Mesh, nu: float = 1.0, space: MiniSpace | None = None) -> dict:
    """Solve the manufactured problem; L2 errors of velocity and (mean-free) pressure."""
    space = space or MiniSpace(mesh)
    u, p, f = manufactured_fields(nu)
    U, P, info = StokesSolver(space, nu).solve(u(mesh.nodes), force=f)
    xq = mesh.quad_points()
    w = space.w
    vol = float(w.sum())
    eu = space.values(U) - u(xq)
    ph = space.p_values(P)
    pe = p(xq)
    ep = (ph - np.sum(w * ph) / vol) - (pe - np.sum(w * pe) / vol)
    return {
        "velocity_l2": float(np.sqrt(np.sum(w[..., None] * eu**2))),
        "pressure_l2": float(np.sqrt(np.sum(w * ep**2))),
        "velocity_norm": float(np.sqrt(np.sum(w[..., None] * u(xq) ** 2))),
        "pressure_mean": float(np.sum(w * ph) / vol),
        "linear_residual": float(info["linear_residual"]),
    }
