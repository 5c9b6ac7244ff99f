"""MINI finite element space (P1 + cubic bubble velocity, P1 pressure).

Velocity fields are stored as arrays of shape ``(n_nodes + n_elements, 3)``:
nodal P1 values first, then one bubble coefficient per element.  The bubble
is 256 l0 l1 l2 l3, equal to one at the centroid and zero on element faces, so
traces of velocity fields are the P1 interpolants of the nodal values.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolveFailed, SingularSystem
from .mesh import SOLID, Mesh


class MiniSpace:
    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        N, E = mesh.n_nodes, mesh.n_elements
        self.N, self.E = N, E
        self.nv = N + E
        bary = mesh.quad_rule.bary
        Q = len(bary)
        self.nq = Q
        prod = np.prod(bary, axis=1)
        self.phi = np.c_[bary, 256.0 * prod]  # (Q, 5)
        # d(bubble) = 256 sum_a (prod_{c != a} l_c) grad l_a
        coef = 256.0 * prod[:, None] / bary
        g = mesh.grad_lambda
        dphi = np.empty((E, Q, 5, 3))
        dphi[:, :, :4, :] = g[:, None, :, :]
        dphi[:, :, 4, :] = np.einsum("qa,eai->eqi", coef, g)
        self.dphi = dphi
        self._dphi_t = np.ascontiguousarray(dphi.transpose(0, 1, 3, 2).reshape(E, 3 * Q, 5))
        self.w = mesh.quad_weights()
        self.loc = np.c_[mesh.tets, N + np.arange(E)]
        self.bary = bary
        self._facet_cache: dict = {}

    # -- evaluation ---------------------------------------------------------
    def values(self, U: np.ndarray) -> np.ndarray:
        return self.phi @ U[self.loc]

    def grads(self, U: np.ndarray) -> np.ndarray:
        """(E, Q, 3, 3) with [k, j] = d_j U_k."""
        Ut = np.swapaxes(U[self.loc], 1, 2)[:, None]  # (E, 1, 3, 5)
        return Ut @ self.dphi

    def p_values(self, P: np.ndarray) -> np.ndarray:
        return P[self.mesh.tets] @ self.bary.T

    def p_grads(self, P: np.ndarray) -> np.ndarray:
        return np.einsum("ea,eai->ei", P[self.mesh.tets], self.mesh.grad_lambda)

    def interpolate_function(self, f) -> np.ndarray:
        """Nodal P1 values of f plus bubbles matching f at element centroids."""
        nodes = self.mesh.nodes
        U = np.zeros((self.nv, 3))
        U[: self.N] = f(nodes)
        cen = nodes[self.mesh.tets].mean(axis=1)
        U[self.N :] = f(cen) - U[: self.N][self.mesh.tets].mean(axis=1)
        return U

    # -- integration against test functions ---------------------------------
    def _scatter(self, local: np.ndarray, index: np.ndarray, size: int) -> np.ndarray:
        out = np.zeros((size,) + local.shape[2:])
        flat_idx = index.ravel()
        flat = local.reshape(len(flat_idx), -1)
        for c in range(flat.shape[1]):
            out.reshape(size, -1)[:, c] = np.bincount(flat_idx, weights=flat[:, c], minlength=size)
        return out

    def integrate_velocity(self, f=None, G=None) -> np.ndarray:
        """Residual (nv, 3): int f . v + G : grad v over all velocity test functions."""
        local = np.zeros((self.E, 5, 3))
        if f is not None:
            local += self.phi.T @ (self.w[..., None] * f)
        if G is not None:
            E, Q = self.E, self.nq
            wG = (self.w[..., None, None] * G).transpose(0, 2, 1, 3).reshape(E, 3, 3 * Q)
            local += np.swapaxes(wG @ self._dphi_t, 1, 2)
        return self._scatter(local, self.loc, self.nv)

    def integrate_pressure(self, s=None, g=None) -> np.ndarray:
        """Residual (N,): int s q + g . grad q over P1 test functions."""
        local = np.zeros((self.E, 4))
        if s is not None:
            local += (self.w * s) @ self.bary
        if g is not None:
            gs = np.einsum("eq,eqi->ei", self.w, g)
            local += np.einsum("ei,eai->ea", gs, self.mesh.grad_lambda)
        return self._scatter(local, self.mesh.tets, self.N)

    # -- interface facets ---------------------------------------------------
    def facet_data(self, tag: int = SOLID):
        """Quadrature on tagged facets: ids, weights (K, Qs), owner element,
        basis values (K, Qs, 5) and gradients (K, Qs, 5, 3) in the owner."""
        if tag in self._facet_cache:
            return self._facet_cache[tag]
        m = self.mesh
        ids = m.facets_with(tag)
        own = m.facet_owner[ids]
        bary = m.facet_bary_in_owner(ids)  # (K, Qs, 4)
        prod = np.prod(bary, axis=2)
        phi = np.concatenate([bary, 256.0 * prod[..., None]], axis=2)
        g = m.grad_lambda[own]
        # product of the other three coordinates, safe where one of them is zero
        others = np.stack([np.prod(np.delete(bary, a, axis=2), axis=2) for a in range(4)], axis=2)
        dphi = np.empty(bary.shape[:2] + (5, 3))
        dphi[:, :, :4, :] = g[:, None]
        dphi[:, :, 4, :] = 256.0 * np.einsum("kqa,kai->kqi", others, g)
        w = m.facet_areas[ids, None] * m.surface_rule.weights[None, :]
        data = dict(ids=ids, owner=own, bary=bary, phi=phi, dphi=dphi, w=w, normal=m.facet_normals[ids])
        self._facet_cache[tag] = data
        return data

    def facet_values(self, U: np.ndarray, tag: int = SOLID) -> np.ndarray:
        fd = self.facet_data(tag)
        return np.einsum("kqa,kai->kqi", fd["phi"], U[self.loc[fd["owner"]]])

    def facet_grads(self, U: np.ndarray, tag: int = SOLID) -> np.ndarray:
        fd = self.facet_data(tag)
        return np.einsum("kai,kqaj->kqij", U[self.loc[fd["owner"]]], fd["dphi"])

    def integrate_velocity_surface(self, f: np.ndarray, tag: int = SOLID) -> np.ndarray:
        """Residual (nv, 3) of int_facets f . v."""
        fd = self.facet_data(tag)
        local = np.einsum("kq,kqi,kqa->kai", fd["w"], f, fd["phi"])
        return self._scatter(local, self.loc[fd["owner"]], self.nv)

    def integrate_pressure_surface(self, s: np.ndarray, tag: int = SOLID) -> np.ndarray:
        """Residual (N,) of int_facets s q."""
        fd = self.facet_data(tag)
        local = np.einsum("kq,kq,kqa->ka", fd["w"], s, fd["bary"])
        return self._scatter(local, self.mesh.tets[fd["owner"]], self.N)

    # -- element matrices ---------------------------------------------------
    def element_mass(self) -> np.ndarray:
        s = np.einsum("eq,qa,qb->eab", self.w, self.phi, self.phi)
        return _expand_scalar(s)

    def element_laplacian(self) -> np.ndarray:
        s = np.einsum("eq,eqai,eqbi->eab", self.w, self.dphi, self.dphi)
        return _expand_scalar(s)

    def element_symgrad(self) -> np.ndarray:
        """Local matrix of int 2 D(u) : D(v), ordering (a, k) -> 3a + k."""
        lap = self.element_laplacian()
        cross = np.einsum("eq,eqal,eqbk->eakbl", self.w, self.dphi, self.dphi)
        return lap + cross.reshape(self.E, 15, 15)

    def element_divergence(self) -> np.ndarray:
        """(E, 4, 15): int q_i div(phi_b e_l), pointwise divergence by quadrature."""
        d = np.einsum("eq,qi,eqbl->eibl", self.w, self.bary, self.dphi)
        return d.reshape(self.E, 4, 15)

    def velocity_dofs(self) -> np.ndarray:
        return (3 * self.loc[:, :, None] + np.arange(3)).reshape(self.E, 15)

    def assemble(self, local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sp.csr_matrix:
        r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
        c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
        return sp.csr_matrix((local.ravel(), (r, c)), shape=shape)

    def velocity_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        d = self.velocity_dofs()
        return self.assemble(local, d, d, (3 * self.nv, 3 * self.nv))

    def divergence_matrix(self) -> sp.csr_matrix:
        return self.assemble(self.element_divergence(), self.mesh.tets, self.velocity_dofs(), (self.N, 3 * self.nv))

    def pressure_mass_vector(self) -> np.ndarray:
        return np.asarray(self.mesh.mass_matrix().sum(axis=1)).ravel()


def _expand_scalar(s: np.ndarray) -> np.ndarray:
    E = s.shape[0]
    out = np.einsum("eab,kl->eakbl", s, np.eye(3))
    return out.reshape(E, 15, 15)


class CondensedSaddle:
    """Saddle system [[A, -B^T], [-B, 0]] with bubbles eliminated element by element.

    Reduced unknowns are P1 velocity (3N) followed by pressure (N).  A linear
    map ``T`` from a user parameter vector z adds Dirichlet elimination or
    rigid constraints; extra unknowns (rigid velocities, the pressure mean
    multiplier) live after the 4N reduced dofs.
    """

    def __init__(self, space: MiniSpace, A_loc: np.ndarray, extra_block: np.ndarray | None = None):
        self.space = space
        N, E = space.N, space.E
        B_loc = space.element_divergence()
        K = np.zeros((E, 19, 19))
        K[:, :15, :15] = A_loc
        K[:, :15, 15:] = -np.transpose(B_loc, (0, 2, 1))
        K[:, 15:, :15] = -B_loc
        r = np.r_[np.arange(12), np.arange(15, 19)]
        b = np.arange(12, 15)
        Kbb_inv = np.linalg.inv(K[:, b][:, :, b])
        Krb = K[:, r][:, :, b]
        Kc = K[:, r][:, :, r] - Krb @ Kbb_inv @ np.transpose(Krb, (0, 2, 1))
        Kc = 0.5 * (Kc + np.transpose(Kc, (0, 2, 1)))
        self.Kbb_inv, self.Krb = Kbb_inv, Krb
        tets = space.mesh.tets
        self.rdofs = np.c_[(3 * tets[:, :, None] + np.arange(3)).reshape(E, 12), 3 * N + tets]
        self.n_red = 4 * N
        n_extra = 0 if extra_block is None else extra_block.shape[0]
        self.n_ext = self.n_red + n_extra + 1
        Kred = space.assemble(Kc, self.rdofs, self.rdofs, (self.n_red, self.n_red))
        m = space.pressure_mass_vector()
        self.pmass = m
        blocks = [[Kred, None, None], [None, None, None], [None, None, None]]
        lam = sp.csr_matrix((m, (3 * N + np.arange(N), np.zeros(N, dtype=int))), shape=(self.n_red, 1))
        blocks[0][2] = lam
        blocks[2][0] = lam.T
        if n_extra:
            blocks[1][1] = sp.csr_matrix(extra_block)
            blocks[1][2] = sp.csr_matrix((n_extra, 1))
        else:
            blocks = [[blocks[0][0], blocks[0][2]], [blocks[2][0], None]]
        self.K = sp.bmat(blocks, format="csr")
        self._lu = None
        self.T = None

    def set_map(self, T: sp.spmatrix) -> None:
        self.T = sp.csr_matrix(T)
        Kz = (self.T.T @ self.K @ self.T).tocsc()
        try:
            self._lu = spla.splu(Kz, permc_spec="MMD_ATA")
        except RuntimeError as exc:
            raise SingularSystem(f"factorization failed: {exc}") from exc
        self.Kz = Kz

    # -- right-hand sides ---------------------------------------------------
    def condense(self, f_vel: np.ndarray, f_p: np.ndarray, f_extra: np.ndarray | None = None) -> np.ndarray:
        """Full residual-form load (velocity (nv,3), pressure (N,)) -> extended vector."""
        sp_ = self.space
        N = sp_.N
        f = np.zeros(self.n_ext)
        f[: 3 * N] = f_vel[:N].ravel()
        f[3 * N : 4 * N] = f_p
        fb = f_vel[N:]  # (E, 3)
        corr = np.einsum("erb,ebc,ec->er", self.Krb, self.Kbb_inv, fb)
        f[: self.n_red] -= np.bincount(self.rdofs.ravel(), weights=corr.ravel(), minlength=self.n_red)
        if f_extra is not None:
            f[self.n_red : self.n_red + len(f_extra)] = f_extra
        return f

    def expand(self, x: np.ndarray, f_vel: np.ndarray):
        """Recover (U (nv,3), P (N,), extra) from the extended solution."""
        sp_ = self.space
        N = sp_.N
        U = np.zeros((sp_.nv, 3))
        U[:N] = x[: 3 * N].reshape(N, 3)
        xr = x[self.rdofs]
        fb = f_vel[N:]
        U[N:] = np.einsum("ebc,ec->eb", self.Kbb_inv, fb - np.einsum("erb,er->eb", self.Krb, xr))
        P = x[3 * N : 4 * N].copy()
        return U, P, x[self.n_red :].copy()

    def solve(self, f_ext: np.ndarray, lift: np.ndarray) -> tuple[np.ndarray, float]:
        rhs = self.T.T @ (f_ext - self.K @ lift)
        z = self._lu.solve(rhs)
        if not np.all(np.isfinite(z)):
            raise LinearSolveFailed("non-finite solution")
        res = float(np.linalg.norm(self.Kz @ z - rhs) / max(np.linalg.norm(rhs), 1e-300))
        if res > 1e-8:
            raise LinearSolveFailed("linear residual too large", residual=res)
        return self.T @ z + lift, res
