"""Geometric coefficients and Picard right-hand sides of the transformed system.

The linear solve always uses the canonical operator (mass / dt, symmetric
gradient viscosity, plain divergence).  Everything that depends on the
extension map is moved to the right-hand side as the difference between the
canonical weak form and the fully transformed one, evaluated at the previous
Picard iterate, so that a fixed point solves the transformed system exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .extension import ExtensionMap, cofactor
from .fe import MiniSpace
from .kinematics import InertiaTensor, _rigid_gram, skew
from .mesh import SOLID, WALL, SolidMesh


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _matvec(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (A @ v[..., None])[..., 0]


@dataclass(frozen=True, eq=False)
class TransformedCoefficients:
    A: np.ndarray  # (E, Q, 3, 3) metric B B^T
    b_lap: np.ndarray  # (E, Q, 3) weak Laplacian of the inverse map
    B: np.ndarray  # (E, Q, 3, 3) inverse gradient
    drift: np.ndarray  # (E, Q, 3) h~' + w~ ^ X~ + dX~/dt
    div_drift: np.ndarray  # (E, Q) transformed divergence of dX~/dt
    omega_tilde: np.ndarray
    h_tilde_dot: np.ndarray
    B_facet: np.ndarray  # (K, Qs, 3, 3) inverse gradient on interface facets


def _facet_inverse_gradient(space: MiniSpace, Xt: np.ndarray, tag: int) -> np.ndarray:
    g = space.facet_grads(Xt, tag)
    cof = cofactor(g)
    det = np.einsum("...i,...i->...", g[..., 0, :], cof[..., 0, :])
    return _swap(cof) / det[..., None, None]


def weak_inverse_laplacian(space: MiniSpace, ext: ExtensionMap) -> np.ndarray:
    """P1 L2 projection of the Laplacian (in x) of each component of the inverse
    map, from the weak form -int grad q . B beta_k + int_boundary q B beta_k . n,
    with beta_k the k-th row of B.  Returns values at volume quadrature points."""
    m = space.mesh
    B = ext.grad_Y_of_X
    rhs = np.zeros((space.N, 3))
    for k in range(3):
        flux = np.einsum("eqij,eqj->eqi", B, B[..., k, :])
        rhs[:, k] = -space.integrate_pressure(g=flux)
    for tag in (WALL, SOLID):
        Bs = _facet_inverse_gradient(space, ext.Xt, tag)
        n = space.facet_data(tag)["normal"]
        for k in range(3):
            s = np.einsum("kqij,kqj,ki->kq", Bs, Bs[..., k, :], n)
            rhs[:, k] += space.integrate_pressure_surface(s, tag)
    nodal = spla.splu(m.mass_matrix().tocsc()).solve(rhs)
    return np.stack([space.p_values(nodal[:, k]) for k in range(3)], axis=-1)


def build_coefficients(ext: ExtensionMap, h_tilde_dot, omega_tilde, space: MiniSpace, with_laplacian: bool = False) -> TransformedCoefficients:
    a = np.asarray(h_tilde_dot, dtype=float)
    w = np.asarray(omega_tilde, dtype=float)
    B = ext.grad_Y_of_X
    Xq = space.values(ext.Xt)
    Vq = space.values(ext.dXt_dt)
    drift = a + Xq @ skew(w).T + Vq
    gV = space.grads(ext.dXt_dt)
    div_drift = np.sum(gV * _swap(B), axis=(-2, -1))
    b_lap = weak_inverse_laplacian(space, ext) if with_laplacian else np.zeros(Xq.shape)
    return TransformedCoefficients(
        A=B @ _swap(B),
        b_lap=b_lap,
        B=B,
        drift=drift,
        div_drift=div_drift,
        omega_tilde=w,
        h_tilde_dot=a,
        B_facet=_facet_inverse_gradient(space, ext.Xt, SOLID),
    )


@dataclass(frozen=True, eq=False)
class PicardRHS:
    F_vol: np.ndarray  # (nv, 3) momentum load added to the canonical system
    F_p: np.ndarray  # (N,) divergence load, residual form
    G_field: np.ndarray  # (E, Q, 3) (I - B) u~
    W_bnd: np.ndarray  # (n_interface, 3) interface velocity datum
    F_M: np.ndarray  # (3,)
    F_I: np.ndarray  # (3,)
    delta: float  # interface flux mismatch int (G - W) . n
    reactions: np.ndarray  # (n_interface, 3) transformed momentum residual rows
    wall_force: np.ndarray  # (3,) sum of the residual rows on the outer wall
    residual: np.ndarray  # (nv, 3) full transformed momentum residual


def divergence_data(U: np.ndarray, coeffs: TransformedCoefficients, space: MiniSpace, W_bnd: np.ndarray | None = None):
    """G = (I - B) u~ at quadrature points, its weak divergence against P1
    pressures and the interface flux mismatch delta = int (G - W) . n."""
    Uq = space.values(U)
    G = Uq - _matvec(coeffs.B, Uq)
    g = space.integrate_pressure(g=-G)
    Us = space.facet_values(U, SOLID)
    Gs = Us - np.einsum("kqij,kqj->kqi", coeffs.B_facet, Us)
    n = space.facet_data(SOLID)["normal"]
    gn = np.einsum("kqi,ki->kq", Gs, n)
    g = g + space.integrate_pressure_surface(gn, SOLID)
    delta = float(np.sum(space.facet_data(SOLID)["w"] * gn))
    if W_bnd is not None:
        delta -= interface_flux(space, W_bnd)
    return G, g, delta


def interface_flux(space: MiniSpace, W_bnd: np.ndarray) -> float:
    """int_{dS} W . n for P1 interface data given on interface nodes."""
    m = space.mesh
    full = np.zeros((space.N, 3))
    full[m.interface_nodes] = W_bnd
    ids = m.facets_with(SOLID)
    return float(np.einsum("ki,ki,k->", full[m.facets[ids]].mean(axis=1), m.facet_normals[ids], m.facet_areas[ids]))


class TransformedOperator:
    """Matrices and fixed data shared by all Picard right-hand sides of a run."""

    def __init__(self, space: MiniSpace, solid: SolidMesh, nu: float, rho_s: float, dt: float):
        self.space, self.solid = space, solid
        self.nu, self.rho_s, self.dt = float(nu), float(rho_s), float(dt)
        self.mass_matrix = space.velocity_matrix(space.element_mass())
        self.divergence = space.divergence_matrix()
        self.gram0 = _rigid_gram(solid, rho_s, solid.nodes)
        self.mass = rho_s * solid.total_volume
        m = space.mesh
        self.y_iface = m.nodes[m.interface_nodes]
        n_s = np.zeros(space.N)
        ids = m.facets_with(SOLID)
        np.add.at(n_s, m.facets[ids].ravel(), np.repeat(m.facet_areas[ids] / 3.0, 3))
        self.interface_load = n_s
        self.interface_area = m.surface_area(SOLID)

    def interface_datum(self, omega_tilde, X_iface: np.ndarray, V_iface: np.ndarray) -> np.ndarray:
        return np.cross(np.asarray(omega_tilde, float), X_iface - self.y_iface) + V_iface

    def momentum_residual(self, U, P, U_prev, coeffs: TransformedCoefficients):
        """Transformed momentum residual and the geometric pieces used by the RHS."""
        sp_ = self.space
        nu = self.nu
        Uq = sp_.values(U)
        gU = sp_.grads(U)
        B = coeffs.B
        gUB = gU @ B
        S = gUB + _swap(gUB)
        visc_geo = nu * (S @ _swap(B))
        visc_can = nu * (gU + _swap(gU))
        divx = np.trace(gUB, axis1=-2, axis2=-1) - coeffs.div_drift
        conv = (
            Uq @ skew(coeffs.omega_tilde).T
            + _matvec(gUB, Uq - coeffs.drift)
            + 0.5 * divx[..., None] * Uq
        )
        # G_mat^T P: -int grad P . (I - B) phi + int_dS P (I - B) phi . n
        IB = np.eye(3) - B
        gP = sp_.p_grads(P)
        f_g = -_matvec(_swap(IB), gP[:, None, :])
        GtP = sp_.integrate_velocity(f=f_g)
        Ps = np.einsum("kqa,ka->kq", sp_.facet_data(SOLID)["bary"], P[sp_.mesh.tets[sp_.facet_data(SOLID)["owner"]]])
        IBs = np.eye(3) - coeffs.B_facet
        n = sp_.facet_data(SOLID)["normal"]
        GtP += sp_.integrate_velocity_surface(Ps[..., None] * np.einsum("kqij,ki->kqj", IBs, n), SOLID)
        BtP = (self.divergence.T @ P).reshape(-1, 3)
        mass_term = (self.mass_matrix @ (U - U_prev).ravel()).reshape(-1, 3) / self.dt
        geo = sp_.integrate_velocity(f=conv, G=visc_geo)
        residual = mass_term + geo - BtP + GtP
        F_vel = sp_.integrate_velocity(G=visc_can - visc_geo, f=-conv) - GtP
        return residual, F_vel

    def rhs(
        self,
        U: np.ndarray,
        P: np.ndarray,
        rigid: np.ndarray,
        U_prev: np.ndarray,
        rigid_prev: np.ndarray,
        coeffs: TransformedCoefficients,
        X_iface: np.ndarray,
        V_iface: np.ndarray,
        X_solid: np.ndarray,
        inertia: InertiaTensor,
    ) -> PicardRHS:
        """Right-hand sides from the iterate (U, P, rigid = (h~', w~))."""
        m = self.space.mesh
        a, b = rigid[:3], rigid[3:]
        W = self.interface_datum(b, X_iface, V_iface)
        residual, F_vel = self.momentum_residual(U, P, U_prev, coeffs)
        G, g, delta = divergence_data(U, coeffs, self.space, W)
        g = g - delta * self.interface_load / self.interface_area
        reactions = residual[m.interface_nodes]
        gram_star = _rigid_gram(self.solid, self.rho_s, X_solid)
        dz = (np.asarray(rigid) - np.asarray(rigid_prev)) / self.dt
        F_rig = (self.gram0 - gram_star) @ dz
        F_M = -self.mass * np.cross(b, a)
        F_I = -(inertia.I_star_dot @ b) + np.cross(inertia.I_star @ b, b)
        lever = np.sum(np.cross(X_iface - self.y_iface, reactions), axis=0)
        F_rig[:3] += F_M
        F_rig[3:] += F_I - lever
        return PicardRHS(
            F_vol=F_vel,
            F_p=-g,
            G_field=G,
            W_bnd=W,
            F_M=F_rig[:3],
            F_I=F_rig[3:],
            delta=delta,
            reactions=reactions,
            wall_force=residual[m.wall_nodes].sum(axis=0),
            residual=residual,
        )


def picard_rhs(op: TransformedOperator, U, P, rigid, U_prev, rigid_prev, coeffs, X_iface, V_iface, X_solid, inertia) -> PicardRHS:
    return op.rhs(U, P, rigid, U_prev, rigid_prev, coeffs, X_iface, V_iface, X_solid, inertia)
