"""Volume-preserving extension of the solid deformation into the fluid.

The map X~ lives in the MINI velocity space on the reference fluid mesh.  Each
time step advances it incrementally, X~ = X~_prev + dt V, where V solves a
Stokes-regularised divergence problem whose boundary data are the prescribed
traces and whose divergence is chosen so that det grad X~ = 1 at the fixed
point of a chord iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityViolation, ExtensionDiverged
from .fe import MiniSpace
from .kinematics import DeformationField, RigidState, integrate_rotation, volume_flux
from .linsolve import StokesSolver


def cofactor(m: np.ndarray) -> np.ndarray:
    """Cofactor matrix over the last two axes: m @ cofactor(m).T = det(m) I."""
    m = np.ascontiguousarray(np.moveaxis(np.asarray(m, dtype=float), (-2, -1), (0, 1)))
    out = np.empty_like(m)
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            out[i, j] = m[i1, j1] * m[i2, j2] - m[i1, j2] * m[i2, j1]
    return np.moveaxis(out, (0, 1), (-2, -1))


def _det(m: np.ndarray) -> np.ndarray:
    m = np.ascontiguousarray(np.moveaxis(m, (-2, -1), (0, 1)))
    return (
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


@dataclass(frozen=True, eq=False)
class ExtensionMap:
    """X~ and its derived tensors at volume quadrature points.

    ``Xt`` and ``dXt_dt`` have shape (n_nodes + n_elements, 3); the bubble rows
    are the MINI enrichment, the nodal rows are the values at mesh nodes.
    """

    t: float
    Xt: np.ndarray
    dXt_dt: np.ndarray
    grad_Xt: np.ndarray
    cof_grad_Xt: np.ndarray
    det_grad_Xt: np.ndarray
    grad_Y_of_X: np.ndarray
    h: np.ndarray
    R: np.ndarray
    det_residual: float = 0.0
    det_residual_max: float = 0.0
    iterations: int = 0
    contraction_ratios: tuple = ()
    compat_flux: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def nodal(self) -> np.ndarray:
        n = self.Xt.shape[0] - self.grad_Xt.shape[0]
        return self.Xt[:n]


def _weak_det_residual(space: MiniSpace, det: np.ndarray) -> float:
    r = space.integrate_pressure(s=det - 1.0)
    return float(np.max(np.abs(r) / space.pressure_mass_vector()))


def build_extension(space: MiniSpace, Xt: np.ndarray, dXt_dt: np.ndarray, t: float, h, R, **info) -> ExtensionMap:
    grad = space.grads(Xt)
    cof = cofactor(grad)
    det = _det(grad)
    B = np.swapaxes(cof, -1, -2) / det[..., None, None]
    return ExtensionMap(
        t=float(t),
        Xt=Xt,
        dXt_dt=dXt_dt,
        grad_Xt=grad,
        cof_grad_Xt=cof,
        det_grad_Xt=det,
        grad_Y_of_X=B,
        h=np.asarray(h, dtype=float),
        R=np.asarray(R, dtype=float),
        det_residual=_weak_det_residual(space, det),
        det_residual_max=float(np.max(np.abs(det - 1.0))),
        **info,
    )


def identity_extension(space: MiniSpace, t: float = 0.0) -> ExtensionMap:
    Xt = np.zeros((space.nv, 3))
    Xt[: space.N] = space.mesh.nodes
    return build_extension(space, Xt, np.zeros_like(Xt), t, np.zeros(3), np.eye(3))


def extension_solver(space: MiniSpace) -> StokesSolver:
    """Cached unit-viscosity Stokes solver used for every extension solve."""
    solver = getattr(space, "_extension_solver", None)
    if solver is None:
        solver = StokesSolver(space, nu=1.0)
        space._extension_solver = solver
    return solver


def wall_target(y: np.ndarray, h: np.ndarray, R: np.ndarray) -> np.ndarray:
    """R^T (y - h) for row vectors y."""
    return (y - h) @ R


def advance_extension(
    prev: ExtensionMap,
    space: MiniSpace,
    deform: DeformationField,
    rigid_prev: RigidState,
    h_tilde_dot,
    omega_tilde,
    dt: float,
    tol_ext: float = 1e-6,
    max_iter: int = 20,
    guess: ExtensionMap | None = None,
) -> ExtensionMap:
    """One time step of X~ from prev.t to prev.t + dt with candidate rigid velocities.

    ``guess`` (an earlier result for the same step) warm-starts the iteration."""
    m = space.mesh
    N = space.N
    t = prev.t + dt
    solid = deform.solid
    Xs, Vs = deform.evaluate(t)
    flux = volume_flux(solid, Xs, Vs)
    if abs(flux) > 1e-6 * solid.total_volume / dt:
        raise CompatibilityViolation("solid deformation does not preserve volume", flux=flux, t=t)
    R = integrate_rotation(rigid_prev.R, omega_tilde, dt)
    h = rigid_prev.h + dt * (R @ np.asarray(h_tilde_dot, dtype=float))
    target = np.zeros((N, 3))
    target[m.interface_nodes] = Xs[solid.interface_nodes]
    target[m.wall_nodes] = wall_target(m.nodes[m.wall_nodes], h, R)
    bnd = m.boundary_nodes
    dirichlet = np.zeros((N, 3))
    dirichlet[bnd] = (target[bnd] - prev.Xt[bnd]) / dt

    solver = extension_solver(space)
    tr_prev = np.trace(prev.grad_Xt, axis1=-2, axis2=-1)
    X = prev.Xt if guess is None else guess.Xt
    grad = prev.grad_Xt if guess is None else guess.grad_Xt
    increments: list[float] = []
    residuals: list[float] = []
    V = prev.dXt_dt
    det_old = _det(grad)
    growing = 0
    for k in range(max_iter):
        det_k = _det(grad)
        f = (np.trace(grad, axis1=-2, axis2=-1) - tr_prev - (det_k - 1.0)) / dt
        V, _, _ = solver.solve(dirichlet, f, compat_tol=np.inf)
        X_new = prev.Xt + dt * V
        X_new[bnd] = target[bnd]
        grad = space.grads(X_new)
        det_new = _det(grad)
        inc = float(np.max(np.abs(X_new - X)))
        dres = float(np.max(np.abs(det_new - det_old)))
        increments.append(inc)
        residuals.append(dres)
        X, det_old = X_new, det_new
        if k > 0 and (dres <= tol_ext or inc <= tol_ext * dt):
            break
        if k == 0 and inc <= tol_ext * dt:
            break
        if len(increments) > 1 and increments[-1] > increments[-2]:
            growing += 1
            if growing >= 3:
                raise ExtensionDiverged("extension iteration is not contracting", t=t, increments=increments)
        else:
            growing = 0
    else:
        if len(increments) > 1 and increments[-1] >= increments[0]:
            raise ExtensionDiverged("extension iteration did not converge", t=t, increments=increments)
    ratios = tuple(b / a for a, b in zip(increments[:-1], increments[1:]) if a > 0)
    return build_extension(
        space,
        X,
        (X - prev.Xt) / dt,
        t,
        h,
        R,
        iterations=len(increments),
        contraction_ratios=ratios,
        compat_flux=flux,
        extras={"increments": increments, "det_increments": residuals},
    )


def piola_residual(ext: ExtensionMap, space: MiniSpace) -> float:
    """Weak row-wise divergence of cof grad X~ against interior P1 tests,
    as an L2 norm (lumped mass) relative to the L2 norm of the cofactor."""
    m = space.mesh
    cof = ext.cof_grad_Xt
    r = np.stack([space.integrate_pressure(g=cof[..., k, :]) for k in range(3)], axis=1)
    mass = space.pressure_mass_vector()
    inner = m.interior_nodes
    num = np.sqrt(np.sum(r[inner] ** 2 / mass[inner, None]))
    den = np.sqrt(np.sum(space.w[..., None, None] * cof**2))
    return float(num / den)


def piola_residual_p1(mesh, X_nodal: np.ndarray) -> float:
    """Same measure as ``piola_residual`` for a P1 map given by nodal values only;
    cheap enough for fine meshes since the cofactor is element-constant."""
    cof = cofactor(mesh.gradient(np.asarray(X_nodal, dtype=float)))
    local = np.einsum("e,eki,eai->eak", mesh.volumes, cof, mesh.grad_lambda)
    N = mesh.n_nodes
    r = np.stack([np.bincount(mesh.tets.ravel(), weights=local[..., k].ravel(), minlength=N) for k in range(3)], axis=1)
    mass = np.asarray(mesh.mass_matrix().sum(axis=1)).ravel()
    inner = mesh.interior_nodes
    num = np.sqrt(np.sum(r[inner] ** 2 / mass[inner, None]))
    den = np.sqrt(np.sum(mesh.volumes[:, None, None] * cof**2))
    return float(num / den)
