"""Rigid kinematics and the prescribed solid deformation.

Deformations are nodal P1 fields on the solid mesh.  The self-propulsion
constraints are imposed by projecting the deformation *velocity*: the
admissible deformation integrates dX/dt = P(X) V_raw(t), where P removes the
volume flux with a dilation about the mass centre and then removes linear and
angular momentum with a rigid field.  The two corrections do not interact: a
dilation about the mass centre carries no momentum, and rigid fields carry no
flux through a closed surface.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, H1Violation, SingularInertia
from .mesh import SolidMesh

H1_MIN_DET = 0.1


def skew(omega) -> np.ndarray:
    x, y, z = (float(v) for v in omega)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_exp(omega_dt) -> np.ndarray:
    """exp(S(w)) by the axis-angle closed form."""
    K = skew(omega_dt)
    theta = math.sqrt(K[2, 1] ** 2 + K[0, 2] ** 2 + K[1, 0] ** 2)
    if theta < 1e-8:
        # Taylor tails keep full accuracy for tiny angles
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def _polish(R: np.ndarray) -> np.ndarray:
    # one Newton step toward the polar factor; quadratic in the defect
    return 1.5 * R - 0.5 * R @ R.T @ R


def integrate_rotation(R, omega_tilde, dt: float) -> np.ndarray:
    """R exp(dt S(w~)), re-orthonormalised."""
    R = np.asarray(R, dtype=float)
    x, y, z = (float(v) for v in omega_tilde)
    if x == 0.0 and y == 0.0 and z == 0.0:
        return R.copy()
    return _polish(R @ rotation_exp((dt * x, dt * y, dt * z)))


@dataclass(frozen=True)
class RigidState:
    """Mass-centre position and velocity, orientation, angular velocity (physical frame)."""

    h: np.ndarray
    h_dot: np.ndarray
    R: np.ndarray
    omega: np.ndarray

    @classmethod
    def at_rest(cls) -> "RigidState":
        return cls(np.zeros(3), np.zeros(3), np.eye(3), np.zeros(3))

    @classmethod
    def from_tilde(cls, h, R, h_tilde_dot, omega_tilde) -> "RigidState":
        R = np.asarray(R, dtype=float)
        return cls(np.asarray(h, float), R @ np.asarray(h_tilde_dot, float), R, R @ np.asarray(omega_tilde, float))

    @property
    def h_tilde_dot(self) -> np.ndarray:
        return self.R.T @ self.h_dot

    @property
    def omega_tilde(self) -> np.ndarray:
        return self.R.T @ self.omega

    def orthonormality_defect(self) -> float:
        return float(np.abs(self.R.T @ self.R - np.eye(3)).max())


# ---------------------------------------------------------------------------
# raw deformation families: Lagrangian velocity V_raw(y, t) on solid nodes


class IdentityFamily:
    name = "none"

    def velocity(self, y: np.ndarray, t: float) -> np.ndarray:
        return np.zeros_like(y)

    def position(self, y: np.ndarray, t: float) -> np.ndarray:
        return y.copy()


class DilationFamily:
    """Breathing mode X = (1 + eps sin(w t)) y, w = 2 pi frequency."""

    name = "dilation"

    def __init__(self, amplitude: float, frequency: float):
        self.eps = float(amplitude)
        self.w = 2 * np.pi * float(frequency)

    def position(self, y, t):
        return (1.0 + self.eps * np.sin(self.w * t)) * y

    def velocity(self, y, t):
        return self.eps * self.w * np.cos(self.w * t) * y


class TravellingWaveFamily:
    """Axial peristaltic wave on a ball of radius ``radius``.

    Displacement eps s(t) (|y|/r)^2 sin(k pi y1/r - w t) (0, y2, y3), with
    w = 2 pi frequency and the start-up envelope s(t) = 1 - exp(-(t/tau)^2),
    tau a quarter period, so X(0) = Id and dX/dt(0) = 0.
    """

    name = "travelling_wave"

    def __init__(self, amplitude: float, frequency: float, radius: float, wavenumber: float = 1.0):
        self.eps = float(amplitude)
        self.w = 2 * np.pi * float(frequency)
        self.r = float(radius)
        self.k = float(wavenumber)
        self.tau = 0.25 * 2 * np.pi / self.w if self.w > 0 else 1.0

    def _parts(self, y, t):
        env = 1.0 - np.exp(-((t / self.tau) ** 2))
        denv = 2.0 * t / self.tau**2 * np.exp(-((t / self.tau) ** 2))
        theta = self.k * np.pi * y[:, 0] / self.r - self.w * t
        shape = (np.sum(y**2, axis=1) / self.r**2)[:, None] * np.c_[np.zeros(len(y)), y[:, 1], y[:, 2]]
        return env, denv, theta, shape

    def position(self, y, t):
        env, _, theta, shape = self._parts(y, t)
        return y + self.eps * env * np.sin(theta)[:, None] * shape

    def velocity(self, y, t):
        env, denv, theta, shape = self._parts(y, t)
        rate = denv * np.sin(theta) - env * self.w * np.cos(theta)
        return self.eps * rate[:, None] * shape


class TabulatedFamily:
    """Nodal time series read from an ``FSIDEFORM 1`` file, linearly interpolated."""

    name = "file"

    def __init__(self, positions: np.ndarray, velocities: np.ndarray, dt: float):
        self.X = np.asarray(positions, float)
        self.V = np.asarray(velocities, float)
        self.dt = float(dt)

    @classmethod
    def load(cls, path) -> "TabulatedFamily":
        lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
        head = lines[0] if lines else []
        if head[:2] != ["FSIDEFORM", "1"]:
            raise ConfigInvalid("missing 'FSIDEFORM 1' header", path=path)
        try:
            meta = dict(tok.split("=", 1) for tok in head[2:])
            n, k, dt = int(meta["nodes"]), int(meta["samples"]), float(meta["dt"])
            data = np.array([[float(v) for v in row] for row in lines[1 : 1 + n * k]])
            data = data.reshape(k, n, 6)
        except (KeyError, ValueError) as exc:
            raise ConfigInvalid(f"malformed deformation file: {exc}", path=path) from exc
        return cls(data[:, :, :3], data[:, :, 3:], dt)

    @property
    def t_max(self) -> float:
        return self.dt * (len(self.X) - 1)

    def _lerp(self, table, t):
        if t < 0 or t > self.t_max * (1 + 1e-12):
            raise ConfigInvalid("time outside the tabulated deformation", t=t, t_max=self.t_max)
        s = min(t / self.dt, len(table) - 1.0)
        i = min(int(s), len(table) - 2)
        f = s - i
        return (1 - f) * table[i] + f * table[i + 1]

    def _check(self, y):
        if len(y) != self.X.shape[1]:
            raise ConfigInvalid("tabulated deformation node count does not match the solid mesh")

    def position(self, y, t):
        self._check(y)
        return self._lerp(self.X, t)

    def velocity(self, y, t):
        self._check(y)
        return self._lerp(self.V, t)


def save_tabulated(path, positions: np.ndarray, velocities: np.ndarray, dt: float) -> None:
    k, n, _ = positions.shape
    rows = [f"FSIDEFORM 1 nodes={n} samples={k} dt={dt:.17g}"]
    for X, V in zip(positions, velocities):
        rows += [" ".join(f"{v:.17g}" for v in (*x, *u)) for x, u in zip(X, V)]
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# deformation fields


@dataclass(frozen=True)
class InertiaTensor:
    I_star: np.ndarray
    I_star_dot: np.ndarray
    I0: np.ndarray


class DeformationField:
    """X*(., t) and dX*/dt(., t) at the solid mesh nodes."""

    def __init__(self, solid: SolidMesh, rho_s: float):
        self.solid = solid
        self.rho_s = float(rho_s)
        self.mass = self.rho_s * solid.total_volume

    def evaluate(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def interface_positions(self, t: float) -> np.ndarray:
        return self.evaluate(t)[0][self.solid.interface_nodes]

    def interface_state(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        X, V = self.evaluate(t)
        idx = self.solid.interface_nodes
        return X[idx], V[idx]

    @property
    def is_identity(self) -> bool:
        return False


class RawDeformation(DeformationField):
    """Unconstrained family evaluated analytically."""

    def __init__(self, family, solid: SolidMesh, rho_s: float):
        super().__init__(solid, rho_s)
        self.family = family

    def evaluate(self, t):
        y = self.solid.nodes
        return self.family.position(y, t), self.family.velocity(y, t)

    @property
    def is_identity(self) -> bool:
        return isinstance(self.family, IdentityFamily)


def _surface_area_vectors(solid: SolidMesh, X: np.ndarray) -> np.ndarray:
    """(com grad X) n dA per solid surface facet; exact for P1 X (Nanson)."""
    p = X[solid.facets]
    return 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def volume_flux(solid: SolidMesh, X: np.ndarray, V: np.ndarray) -> float:
    """Integral of V . (com grad X) n over the solid surface (n out of the solid)."""
    area = _surface_area_vectors(solid, X)
    return float(np.einsum("ki,ki->", V[solid.facets].mean(axis=1), area))


def _moments(solid: SolidMesh, rho_s: float, X: np.ndarray, V: np.ndarray):
    # P1 products are integrated exactly by the mass matrix
    MV = rho_s * (solid.mass_matrix() @ V)
    return MV.sum(axis=0), np.cross(X, MV).sum(axis=0)


def _rigid_gram(solid: SolidMesh, rho_s: float, X: np.ndarray) -> np.ndarray:
    """6x6 map (a, b) -> (momentum, angular momentum) of the field a + b ^ X."""
    MX = rho_s * (solid.mass_matrix() @ X)
    m = rho_s * solid.total_volume
    first = MX.sum(axis=0)
    second = X.T @ MX
    G = np.zeros((6, 6))
    G[:3, :3] = m * np.eye(3)
    G[:3, 3:] = -skew(first)  # int b ^ X = -S(int X) b
    G[3:, :3] = skew(first)  # int X ^ a = S(int X) a
    G[3:, 3:] = np.trace(second) * np.eye(3) - second
    return G


def min_det_gradient(solid: SolidMesh, X: np.ndarray) -> float:
    return float(np.linalg.det(solid.gradient(X)).min())


def project_velocity(solid: SolidMesh, rho_s: float, X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Admissible part of the velocity V at configuration X."""
    centre = (solid.mass_matrix() @ X).sum(axis=0) / solid.total_volume
    dil = X - centre
    # flux of X - centre is three times the deformed volume
    beta = -volume_flux(solid, X, V) / volume_flux(solid, X, dil)
    V = V + beta * dil
    G = _rigid_gram(solid, rho_s, X)
    cond = np.linalg.cond(G)
    if cond > 1e12:
        raise SingularInertia("rigid-motion Gram matrix is singular", cond=cond)
    lin, ang = _moments(solid, rho_s, X, V)
    ab = np.linalg.solve(G, np.concatenate([lin, ang]))
    return V - ab[:3] - np.cross(ab[3:], X)


class ProjectedDeformation(DeformationField):
    """Admissible deformation generated by the projected velocity of ``raw``.

    The flow dX/dt = P(X) V_raw(t) is integrated with classical RK4 on a fine
    grid and interpolated by cubic Hermite splines; the velocity returned at
    any t is recomputed by projecting at the interpolated X, so the
    constraints hold to roundoff at every t.
    """

    def __init__(self, raw: DeformationField, substep: float | None = None):
        super().__init__(raw.solid, raw.rho_s)
        self.raw = raw
        fam = getattr(raw, "family", None)
        w = getattr(fam, "w", 0.0) or 0.0
        self.substep = substep or (2 * np.pi / w / 100 if w > 0 else 0.01)
        self._identity = raw.is_identity
        y = raw.solid.nodes.copy()
        self._X = [y]
        self._V = [self._rate(y, 0.0)]
        self._lock = threading.Lock()

    @property
    def is_identity(self) -> bool:
        return self._identity

    def _rate(self, X, t):
        return project_velocity(self.solid, self.rho_s, X, self.raw.evaluate(t)[1])

    def _extend(self, t: float) -> None:
        d = self.substep
        while (len(self._X) - 1) * d < t:
            k = len(self._X) - 1
            X, t0 = self._X[-1], k * d
            k1 = self._V[-1]
            k2 = self._rate(X + 0.5 * d * k1, t0 + 0.5 * d)
            k3 = self._rate(X + 0.5 * d * k2, t0 + 0.5 * d)
            k4 = self._rate(X + d * k3, t0 + d)
            Xn = X + d / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            self._X.append(Xn)
            self._V.append(self._rate(Xn, t0 + d))

    def evaluate(self, t):
        t = float(t)
        if t < 0:
            raise ValueError("negative time")
        if self._identity:
            y = self.solid.nodes
            return y.copy(), np.zeros_like(y)
        with self._lock:
            self._extend(t)
            d = self.substep
            k = min(int(t / d), len(self._X) - 2)
            s = t / d - k
            X0, X1, V0, V1 = self._X[k], self._X[k + 1], self._V[k], self._V[k + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        X = h00 * X0 + h10 * d * V0 + h01 * X1 + h11 * d * V1
        return X, self._rate(X, t)


def make_family(name: str, amplitude: float = 0.0, frequency: float = 1.0, radius: float = 1.0, path=None):
    if name == "none":
        return IdentityFamily()
    if name == "dilation":
        return DilationFamily(amplitude, frequency)
    if name == "travelling_wave":
        return TravellingWaveFamily(amplitude, frequency, radius)
    if name == "file":
        if path is None:
            raise ConfigInvalid("deformation.family = file needs deformation.path")
        return TabulatedFamily.load(path)
    raise ConfigInvalid(f"unknown deformation family {name!r}")


def project_deformation(raw: DeformationField, solid: SolidMesh | None = None) -> DeformationField:
    """Admissible deformation built from ``raw``; admissible fields pass through."""
    if isinstance(raw, ProjectedDeformation):
        return raw
    if solid is not None and solid is not raw.solid:
        raise ValueError("deformation is defined on a different solid mesh")
    X0, _ = raw.evaluate(0.0)
    if min_det_gradient(raw.solid, X0) < H1_MIN_DET:
        raise H1Violation("initial deformation violates the det threshold")
    return ProjectedDeformation(raw)


def constraint_residuals(deform: DeformationField, solid: SolidMesh, t: float):
    """(volume flux, linear momentum, angular momentum) of the deformation at t."""
    X, V = deform.evaluate(t)
    md = min_det_gradient(solid, X)
    if md < H1_MIN_DET:
        raise H1Violation("deformation gradient determinant below threshold", t=t, min_det=md)
    lin, ang = _moments(solid, deform.rho_s, X, V)
    return volume_flux(solid, X, V), lin, ang


def inertia_from_nodal(solid: SolidMesh, rho_s: float, X: np.ndarray, V: np.ndarray, I0=None) -> InertiaTensor:
    M = solid.mass_matrix()
    xx = rho_s * (X.T @ (M @ X))
    xv = rho_s * (V.T @ (M @ X))
    I_star = np.trace(xx) * np.eye(3) - xx
    I_dot = 2 * np.trace(xv) * np.eye(3) - xv - xv.T
    I_star = 0.5 * (I_star + I_star.T)
    if I0 is None:
        y = solid.nodes
        I0 = inertia_from_nodal(solid, rho_s, y, np.zeros_like(y), I0=np.zeros((3, 3))).I_star
    return InertiaTensor(I_star, I_dot, np.asarray(I0))


def inertia(deform: DeformationField, solid: SolidMesh, t: float) -> InertiaTensor:
    X, V = deform.evaluate(t)
    I0 = getattr(deform, "_I0", None)
    tensor = inertia_from_nodal(solid, deform.rho_s, X, V, I0)
    if I0 is None:
        deform._I0 = tensor.I0
    return tensor
