"""Reference geometry: a ball S inside the box O, meshed with tetrahedra.

The fluid mesh covers F = O \\ S and the companion solid mesh covers S.  Both
come out of one regular grid (six tets per cube) that is deformed so a cube
shell of grid nodes lands on the sphere, hence the two meshes share the
interface nodes bit for bit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .errors import DegenerateElement, MeshFormatError, ResolutionTooCoarse

WALL = 0
SOLID = 1
_TAG_NAMES = {WALL: "wall", SOLID: "solid"}
_TAG_CODES = {v: k for k, v in _TAG_NAMES.items()}


@dataclass(frozen=True)
class QuadRule:
    """Simplex quadrature: barycentric points and weights summing to one."""

    bary: np.ndarray
    weights: np.ndarray
    degree: int


def tet_rule(points_per_axis: int = 3) -> QuadRule:
    """Conical product Gauss-Jacobi rule, exact to degree 2n - 1.

    The default (27 points, degree 5) integrates products of a P1 function
    with derivatives of the cubic bubble exactly, which keeps the discrete
    integration-by-parts identities of the MINI element intact.
    """
    n = points_per_axis
    axes = []
    for alpha in (2.0, 1.0, 0.0):
        x, w = roots_jacobi(n, alpha, 0.0)
        axes.append(((1 + x) / 2, w / w.sum()))
    (u1, w1), (u2, w2), (u3, w3) = axes
    U1, U2, U3 = np.meshgrid(u1, u2, u3, indexing="ij")
    W = np.einsum("i,j,k->ijk", w1, w2, w3).ravel()
    x1 = U1.ravel()
    x2 = (U2 * (1 - U1)).ravel()
    x3 = (U3 * (1 - U1) * (1 - U2)).ravel()
    bary = np.c_[1 - x1 - x2 - x3, x1, x2, x3]
    return QuadRule(bary, W / W.sum(), 2 * n - 1)


def tri_rule() -> QuadRule:
    bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    return QuadRule(bary, np.full(3, 1 / 3), 2)


def _signed_volumes(nodes, tets):
    p = nodes[tets]
    return np.einsum("ei,ei->e", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6.0


def _boundary_faces(tets):
    """Faces used by exactly one tet, as (face nodes, owning tet, opposite local vertex)."""
    local = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    faces = tets[:, local].reshape(-1, 3)
    owner = np.repeat(np.arange(len(tets)), 4)
    opposite = np.tile(np.arange(4), len(tets))
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    once = counts[inv] == 1
    return faces[once], owner[once], opposite[once]


def _orient_outward(nodes, tets, faces, owner):
    """Flip facets so (p1 - p0) x (p2 - p0) points away from the owning tet."""
    p = nodes[faces]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    centroid = nodes[tets[owner]].mean(axis=1)
    flip = np.einsum("ei,ei->e", n, p[:, 0] - centroid) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


class _TetGeometry:
    """Per-element geometry shared by the fluid and solid meshes."""

    nodes: np.ndarray
    tets: np.ndarray

    def _init_geometry(self):
        vol = _signed_volumes(self.nodes, self.tets)
        if np.any(vol <= 0):
            bad = int(np.argmin(vol))
            raise DegenerateElement("tet with non-positive volume", element=bad, volume=vol[bad])
        p = self.nodes[self.tets]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)
        jinv = np.linalg.inv(jac)
        g = np.empty((len(self.tets), 4, 3))
        g[:, 1:, :] = jinv
        g[:, 0, :] = -jinv.sum(axis=1)
        object.__setattr__(self, "volumes", vol)
        object.__setattr__(self, "grad_lambda", g)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.tets)

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    def quad_weights(self, rule: QuadRule | None = None) -> np.ndarray:
        rule = rule or tet_rule()
        return self.volumes[:, None] * rule.weights[None, :]

    def quad_points(self, rule: QuadRule | None = None) -> np.ndarray:
        rule = rule or tet_rule()
        return np.einsum("qa,eai->eqi", rule.bary, self.nodes[self.tets])

    def interpolate(self, nodal: np.ndarray, rule: QuadRule | None = None) -> np.ndarray:
        """P1 interpolation of nodal data (N, ...) to quadrature points (E, Q, ...)."""
        rule = rule or tet_rule()
        return np.einsum("qa,ea...->eq...", rule.bary, nodal[self.tets])

    def mass_matrix(self):
        """Consistent P1 mass matrix (cached)."""
        cached = self.__dict__.get("_mass")
        if cached is None:
            local = (np.ones((4, 4)) + np.eye(4)) / 20.0
            vals = self.volumes[:, None, None] * local[None]
            rows = np.repeat(self.tets, 4, axis=1)
            cols = np.tile(self.tets, (1, 4))
            n = len(self.nodes)
            cached = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
            object.__setattr__(self, "_mass", cached)
        return cached

    def gradient(self, nodal: np.ndarray) -> np.ndarray:
        """Element-constant gradient of a P1 vector field: (E, 3, 3), row = component."""
        return np.einsum("eai,eaj->eij", nodal[self.tets], self.grad_lambda)


@dataclass(frozen=True, eq=False)
class Mesh(_TetGeometry):
    """Fluid reference mesh with tagged boundary facets.

    Facets are oriented so that their normal points out of the fluid: out of
    the box on walls, into the solid on the interface.
    """

    nodes: np.ndarray
    tets: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    facet_owner: np.ndarray
    quad_rule: QuadRule = field(default_factory=tet_rule)
    surface_rule: QuadRule = field(default_factory=tri_rule)

    def __post_init__(self):
        self._init_geometry()
        p = self.nodes[self.facets]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        area = 0.5 * np.linalg.norm(n, axis=1)
        object.__setattr__(self, "facet_areas", area)
        object.__setattr__(self, "facet_normals", n / (2 * area[:, None]))
        wall = np.unique(self.facets[self.facet_tags == WALL])
        solid = np.unique(self.facets[self.facet_tags == SOLID])
        object.__setattr__(self, "wall_nodes", wall)
        object.__setattr__(self, "interface_nodes", solid)
        object.__setattr__(self, "boundary_nodes", np.union1d(wall, solid))
        on_bnd = np.zeros(len(self.nodes), dtype=bool)
        on_bnd[self.boundary_nodes] = True
        object.__setattr__(self, "interior_nodes", np.flatnonzero(~on_bnd))
        for arr in (self.nodes, self.tets, self.facets, self.facet_tags, self.facet_owner):
            arr.flags.writeable = False

    def facets_with(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.facet_tags == tag)

    def surface_area(self, tag: int) -> float:
        return float(self.facet_areas[self.facet_tags == tag].sum())

    def surface_quad(self, tag: int):
        """Facet ids, physical points (K, 3, 3), weights (K, 3) on one tag."""
        ids = self.facets_with(tag)
        pts = np.einsum("qa,kai->kqi", self.surface_rule.bary, self.nodes[self.facets[ids]])
        w = self.facet_areas[ids, None] * self.surface_rule.weights[None, :]
        return ids, pts, w

    def facet_bary_in_owner(self, ids: np.ndarray) -> np.ndarray:
        """Barycentric coordinates (K, Q, 4) of facet quadrature points in the owning tet."""
        tets = self.tets[self.facet_owner[ids]]
        loc = np.argmax(tets[:, None, :] == self.facets[ids][:, :, None], axis=2)
        out = np.zeros((len(ids), len(self.surface_rule.weights), 4))
        rows = np.arange(len(ids))
        for a in range(3):
            out[rows, :, loc[:, a]] = self.surface_rule.bary[None, :, a]
        return out


@dataclass(frozen=True, eq=False)
class SolidMesh(_TetGeometry):
    """Tetrahedral mesh of the solid; ``interface_nodes`` pairs with ``Mesh.interface_nodes``."""

    nodes: np.ndarray
    tets: np.ndarray
    facets: np.ndarray
    interface_nodes: np.ndarray
    quad_rule: QuadRule = field(default_factory=tet_rule)
    surface_rule: QuadRule = field(default_factory=tri_rule)

    def __post_init__(self):
        self._init_geometry()
        p = self.nodes[self.facets]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        area = 0.5 * np.linalg.norm(n, axis=1)
        object.__setattr__(self, "facet_areas", area)
        object.__setattr__(self, "facet_normals", n / (2 * area[:, None]))
        for arr in (self.nodes, self.tets, self.facets, self.interface_nodes):
            arr.flags.writeable = False


def _mirrored_kuhn_tets(n: int) -> np.ndarray:
    """Six tets per grid cell, each split along the cell diagonal through the
    corner nearest the grid centre.  Mirroring the Kuhn split per octant keeps
    the mesh conforming (n even) and aligns every diagonal radially, which is
    what keeps the radially blended tets well shaped."""
    idx = np.arange((n + 1) ** 3).reshape(n + 1, n + 1, n + 1)
    cells = np.stack(np.meshgrid(*(np.arange(n),) * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    flip = cells < n // 2
    tets = []
    for perm in itertools.permutations(range(3)):
        corner = np.zeros(3, dtype=np.int64)
        path = [corner.copy()]
        for ax in perm:
            corner[ax] = 1
            path.append(corner.copy())
        verts = []
        for c in path:
            b = np.where(flip, 1 - c, c)
            p = cells + b
            verts.append(idx[p[:, 0], p[:, 1], p[:, 2]])
        tets.append(np.stack(verts, axis=1))
    return np.concatenate(tets, axis=0)


def _blend_to_sphere(grid: np.ndarray, L: float, a: float, r: float, grading: float) -> np.ndarray:
    """Map the grid so the cube shell |x|_inf = a lands on the sphere of radius r.

    Inside the shell points move toward the sphere in proportion to their
    depth; outside, the map blends from the sphere back to the fixed walls.
    """
    rho = np.abs(grid).max(axis=1)
    d = np.zeros_like(grid)
    nz = rho > 0
    d[nz] = grid[nz] / rho[nz, None]
    e = np.zeros_like(grid)
    e[nz] = d[nz] / np.linalg.norm(d[nz], axis=1)[:, None]
    out = np.empty_like(grid)
    inner = rho <= a
    t = (rho / a)[:, None]
    out[inner] = (r * t * ((1 - t) * d + t * e))[inner]
    s = (np.clip((rho - a) / (L - a), 0.0, 1.0) ** grading)[:, None]
    outer = ~inner
    out[outer] = ((1 - s) * r * e + s * L * d)[outer]
    # exact placement of the two special layers
    out[rho == L] = grid[rho == L]
    shell = rho == a
    out[shell] = r * e[shell]
    return out


def _submesh(nodes, tets):
    used = np.unique(tets)
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return used, nodes[used], remap[tets], remap


def generate_ball_in_box(box_half_width: float, ball_radius: float, resolution: int):
    """Mesh the box [-L, L]^3 with a ball of radius r at the origin.

    The grid has ``resolution`` cells per axis (even).  The grid-aligned cube
    of half-width a ~ 1.5 r is mapped onto the ball, and the cells outside it
    are blended out to the walls, so the fluid and solid meshes share their
    interface nodes exactly.  Returns ``(Mesh, SolidMesh)``.
    """
    L, r, n = float(box_half_width), float(ball_radius), int(resolution)
    if not (0 < r < L):
        raise ValueError("need 0 < ball_radius < box_half_width")
    if n < 8:
        raise ValueError("resolution must be at least 8")
    h = 2 * L / n
    if (L - r) < 2 * h:
        raise ResolutionTooCoarse(
            "fewer than two cell layers between ball and wall", gap=L - r, cell=h
        )
    if n % 2:
        raise ValueError("resolution must be even")
    half = n // 2
    k = int(np.clip(np.rint(1.5 * r / h), 1, half - 2))
    ax = np.linspace(-L, L, n + 1)
    ax[half] = 0.0
    grid = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    ijk = np.stack(np.meshgrid(*(np.arange(n + 1) - half,) * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    # exact integer shells so the layer tests below have no rounding
    level = np.abs(ijk).max(axis=1)
    rho = level * h
    rho[level == half] = L
    grid = np.where(np.abs(ijk) == half, np.sign(ijk) * L, grid)
    a = k * h
    rho[level == k] = a
    scaled = np.zeros_like(grid)
    nz = level > 0
    scaled[nz] = grid[nz] / (level[nz] * h)[:, None] * rho[nz, None]
    nodes = _blend_to_sphere(scaled, L, a, r, grading=1.3)

    tets = _mirrored_kuhn_tets(n)
    vol = _signed_volumes(grid, tets)
    tets[vol < 0] = tets[vol < 0][:, [0, 2, 1, 3]]
    in_solid = level[tets].max(axis=1) <= k
    fluid_tets, solid_tets = tets[~in_solid], tets[in_solid]
    for group in (fluid_tets, solid_tets):
        v = _signed_volumes(nodes, group)
        if np.any(v <= 1e-12 * h**3):
            raise DegenerateElement("mapping to the sphere inverted a tet", min_volume=v.min())

    used_f, f_nodes, f_tets, fmap = _submesh(nodes, fluid_tets)
    faces, owner, _ = _boundary_faces(f_tets)
    faces = _orient_outward(f_nodes, f_tets, faces, owner)
    tags = np.where(level[used_f][faces].min(axis=1) == half, WALL, SOLID).astype(np.int8)
    mesh = Mesh(f_nodes, f_tets, faces, tags, owner)

    used_s, s_nodes, s_tets, smap = _submesh(nodes, solid_tets)
    s_faces, s_owner, _ = _boundary_faces(s_tets)
    s_faces = _orient_outward(s_nodes, s_tets, s_faces, s_owner)
    solid = SolidMesh(s_nodes, s_tets, s_faces, smap[used_f[mesh.interface_nodes]])
    return mesh, solid


def save_mesh(mesh: Mesh | SolidMesh, path) -> None:
    """Write the ``FSIMESH 1`` ASCII format."""
    if isinstance(mesh, Mesh):
        facets, tags = mesh.facets, mesh.facet_tags
    else:
        facets, tags = mesh.facets, np.full(len(mesh.facets), SOLID)
    lines = ["FSIMESH 1", f"NODES {len(mesh.nodes)}"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.nodes]
    lines.append(f"TETS {len(mesh.tets)}")
    lines += [" ".join(map(str, t)) for t in mesh.tets]
    lines.append(f"FACETS {len(facets)}")
    lines += [f"{i} {j} {k} {_TAG_NAMES[int(t)]}" for (i, j, k), t in zip(facets, tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_fsimesh(path):
    tokens = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not tokens or tokens[0] != ["FSIMESH", "1"]:
        raise MeshFormatError("missing 'FSIMESH 1' header", path=path)
    pos = 1

    def section(name):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos][0] != name or len(tokens[pos]) != 2:
            raise MeshFormatError(f"expected section {name}", path=path, line=pos + 1)
        count = int(tokens[pos][1])
        rows = tokens[pos + 1 : pos + 1 + count]
        if len(rows) != count:
            raise MeshFormatError(f"truncated section {name}", path=path)
        pos += 1 + count
        return rows

    try:
        nodes = np.array([[float(v) for v in r] for r in section("NODES")], dtype=float).reshape(-1, 3)
        tets = np.array([[int(v) for v in r] for r in section("TETS")], dtype=np.int64).reshape(-1, 4)
        frows = section("FACETS")
        facets = np.array([[int(v) for v in r[:3]] for r in frows], dtype=np.int64).reshape(-1, 3)
        tags = np.array([_TAG_CODES[r[3]] for r in frows], dtype=np.int8)
    except (ValueError, KeyError, IndexError) as exc:
        raise MeshFormatError(f"malformed mesh file: {exc}", path=path) from exc
    return nodes, tets, facets, tags


def load_mesh(path) -> Mesh:
    """Read a fluid mesh; facet ownership and outward orientation are recomputed."""
    nodes, tets, facets, tags = _read_fsimesh(path)
    vol = _signed_volumes(nodes, tets)
    tets = tets.copy()
    tets[vol < 0] = tets[vol < 0][:, [0, 2, 1, 3]]
    bfaces, owner, _ = _boundary_faces(tets)
    bfaces = _orient_outward(nodes, tets, bfaces, owner)
    lookup = {tuple(sorted(f)): t for f, t in zip(facets.tolist(), tags.tolist())}
    try:
        btags = np.array([lookup[tuple(sorted(f))] for f in bfaces.tolist()], dtype=np.int8)
    except KeyError as exc:
        raise MeshFormatError("boundary facet missing from FACETS section", facet=str(exc)) from exc
    return Mesh(nodes, tets, bfaces, btags, owner)


def load_solid_mesh(path, fluid: Mesh) -> SolidMesh:
    """Read a solid mesh whose surface nodes coincide exactly with ``fluid``'s interface."""
    nodes, tets, _, _ = _read_fsimesh(path)
    vol = _signed_volumes(nodes, tets)
    tets = tets.copy()
    tets[vol < 0] = tets[vol < 0][:, [0, 2, 1, 3]]
    faces, owner, _ = _boundary_faces(tets)
    faces = _orient_outward(nodes, tets, faces, owner)
    index = {tuple(p): i for i, p in enumerate(nodes.tolist())}
    try:
        iface = np.array([index[tuple(p)] for p in fluid.nodes[fluid.interface_nodes].tolist()])
    except KeyError as exc:
        raise MeshFormatError("fluid interface node absent from solid mesh") from exc
    return SolidMesh(nodes, tets, faces, iface)


def solid_wall_distance(mesh: Mesh, rigid, deform, t: float, box_half_width: float | None = None) -> float:
    """Distance from the deformed, moved interface to the box walls.

    Interface points are x = h + R X*(y, t); the box is axis aligned and
    centred at the origin, so the distance is the smallest slab gap.
    """
    L = box_half_width if box_half_width is not None else float(np.abs(mesh.nodes).max())
    xstar = deform.interface_positions(t)
    x = rigid.h[None, :] + xstar @ rigid.R.T
    return float(np.min(L - np.abs(x)))
