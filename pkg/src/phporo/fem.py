"""Structured P1 triangular finite elements on the unit square.

The mesh is a uniform n-by-n grid of cells, each split along the same
diagonal (lower-left to upper-right) so that assembled matrices are
bit-reproducible.  All spaces carry homogeneous Dirichlet conditions: free
degrees of freedom are exactly the interior nodes.  Vector-valued spaces are
component-blocked, i.e. dof k < n_free is the x-component at interior node k
and dof n_free + k the y-component.

Integrals use the 3-point edge-midpoint rule, which is exact for quadratic
integrands; P1 stiffness integrands are elementwise constant, so stiffness
and coupling matrices are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCALAR_P1 = "scalar_p1"
VECTOR_P1 = "vector_p1"


class BoundViolationError(ValueError):
    """A sampled coefficient left its admissible range."""


@dataclass(frozen=True)
class Mesh2D:
    """Triangulation of the unit square with counterclockwise elements."""

    nodes: np.ndarray          # (N, 2) coordinates
    triangles: np.ndarray      # (T, 3) node indices, positive orientation
    boundary_nodes: np.ndarray  # sorted indices with x or y in {0, 1}
    resolution: int

    @property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(len(self.nodes), dtype=bool)
        mask[self.boundary_nodes] = False
        return np.nonzero(mask)[0]


def build_unit_square_mesh(n: int) -> Mesh2D:
    """Uniform triangulation with (n+1)^2 nodes and 2 n^2 triangles."""
    if n < 1:
        raise ValueError(f"subdivision count must be >= 1, got {n}")
    coords = np.linspace(0.0, 1.0, n + 1)
    nodes = np.array([(x, y) for y in coords for x in coords])
    tris = []
    for j in range(n):
        for i in range(n):
            ll = j * (n + 1) + i
            lr = ll + 1
            ul = ll + (n + 1)
            ur = ul + 1
            # split along the lower-left to upper-right diagonal
            tris.append((ll, lr, ur))
            tris.append((ll, ur, ul))
    triangles = np.array(tris, dtype=int)
    on_boundary = (
        (nodes[:, 0] == 0.0) | (nodes[:, 0] == 1.0)
        | (nodes[:, 1] == 0.0) | (nodes[:, 1] == 1.0)
    )
    return Mesh2D(nodes, triangles, np.nonzero(on_boundary)[0], n)


@dataclass(frozen=True)
class FeSpace:
    """P1 space on a mesh with Dirichlet nodes eliminated."""

    kind: str
    mesh: Mesh2D
    free_nodes: np.ndarray = field(repr=False)
    node_to_free: np.ndarray = field(repr=False)  # -1 for constrained nodes

    @property
    def components(self) -> int:
        return 2 if self.kind == VECTOR_P1 else 1

    @property
    def dim(self) -> int:
        return self.components * len(self.free_nodes)


def _make_space(mesh: Mesh2D, kind: str) -> FeSpace:
    free = mesh.interior_nodes
    lookup = -np.ones(len(mesh.nodes), dtype=int)
    lookup[free] = np.arange(len(free))
    return FeSpace(kind, mesh, free, lookup)


def scalar_space(mesh: Mesh2D) -> FeSpace:
    return _make_space(mesh, SCALAR_P1)


def vector_space(mesh: Mesh2D) -> FeSpace:
    return _make_space(mesh, VECTOR_P1)


@dataclass(frozen=True)
class PoroMaterial:
    """Physical coefficients of one poroelastic network.

    rho may be zero (quasi-static); alpha may be zero to decouple flow from
    elasticity, which several reduction checks rely on.
    """

    rho: float
    mu: float
    lam: float
    alpha: float
    biot_M: float
    kappa: float
    nu: float

    def __post_init__(self):
        vals = (self.rho, self.mu, self.lam, self.alpha, self.biot_M, self.kappa, self.nu)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("material coefficients must be finite")
        if self.rho < 0:
            raise ValueError("density rho must be >= 0")
        if self.mu <= 0 or self.lam < 0:
            raise ValueError("Lame coefficients need mu > 0 and lambda >= 0")
        if self.alpha < 0:
            raise ValueError("coupling coefficient alpha must be >= 0")
        if self.biot_M <= 0 or self.kappa <= 0 or self.nu <= 0:
            raise ValueError("biot_M, kappa and nu must be positive")


# ---------------------------------------------------------------------------
# Local element matrices (P1, straight triangles)
# ---------------------------------------------------------------------------

def triangle_area(coords) -> float:
    """Signed area; positive for counterclockwise vertex order."""
    (x0, y0), (x1, y1), (x2, y2) = np.asarray(coords, dtype=float)
    return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def p1_gradients(coords) -> np.ndarray:
    """(3, 2) array of the constant gradients of the three hat functions."""
    c = np.asarray(coords, dtype=float)
    area2 = 2.0 * triangle_area(c)
    g = np.empty((3, 2))
    for a in range(3):
        b, d = (a + 1) % 3, (a + 2) % 3
        g[a, 0] = (c[b, 1] - c[d, 1]) / area2
        g[a, 1] = (c[d, 0] - c[b, 0]) / area2
    return g


_MASS_PATTERN = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])


def element_mass(coords, coeff: float = 1.0) -> np.ndarray:
    """Local scalar mass matrix (coeff * area / 12) * [[2,1,1],[1,2,1],[1,1,2]]."""
    return (coeff * triangle_area(coords) / 12.0) * _MASS_PATTERN


def element_stiffness(coords, coeff: float = 1.0) -> np.ndarray:
    """Local scalar stiffness matrix coeff * area * grad_i . grad_j."""
    g = p1_gradients(coords)
    return (coeff * triangle_area(coords)) * (g @ g.T)


def element_elasticity(coords, mu: float, lam: float) -> np.ndarray:
    """Local 6x6 elastic stiffness in component-blocked order (x dofs, y dofs)."""
    g = p1_gradients(coords)
    B = np.zeros((3, 6))  # rows: eps_xx, eps_yy, gamma_xy
    B[0, 0:3] = g[:, 0]
    B[1, 3:6] = g[:, 1]
    B[2, 0:3] = g[:, 1]
    B[2, 3:6] = g[:, 0]
    C = np.array([
        [2.0 * mu + lam, lam, 0.0],
        [lam, 2.0 * mu + lam, 0.0],
        [0.0, 0.0, mu],
    ])
    K = triangle_area(coords) * (B.T @ C @ B)
    return 0.5 * (K + K.T)


def element_divergence(coords, alpha: float = 1.0) -> np.ndarray:
    """Local 3x6 coupling alpha * int (div phi_j) psi_i; div is constant, int psi_i = area/3."""
    g = p1_gradients(coords)
    area = triangle_area(coords)
    div_row = np.concatenate([g[:, 0], g[:, 1]])  # divergence of each local vector dof
    return (alpha * area / 3.0) * np.tile(div_row, (3, 1))


# ---------------------------------------------------------------------------
# Global assembly
# ---------------------------------------------------------------------------

def _scalar_dofs(space: FeSpace, tri) -> np.ndarray:
    return space.node_to_free[tri]


def _scatter_scalar(space: FeSpace, A: np.ndarray, tri, local: np.ndarray) -> None:
    dofs = _scalar_dofs(space, tri)
    for a in range(3):
        if dofs[a] < 0:
            continue
        for b in range(3):
            if dofs[b] >= 0:
                A[dofs[a], dofs[b]] += local[a, b]


def _scatter_vector(space: FeSpace, A: np.ndarray, tri, local: np.ndarray) -> None:
    # local matrices are component-blocked, matching the global dof layout
    nfree = len(space.free_nodes)
    dofs = _scalar_dofs(space, tri)
    gdofs = [dofs[a] + comp * nfree if dofs[a] >= 0 else -1
             for comp in range(2) for a in range(3)]
    for ia in range(6):
        if gdofs[ia] < 0:
            continue
        for ib in range(6):
            if gdofs[ib] >= 0:
                A[gdofs[ia], gdofs[ib]] += local[ia, ib]


def assemble_mass(space: FeSpace, coeff: float) -> np.ndarray:
    """Mass matrix with constant coefficient; block-diagonal per component."""
    if coeff < 0:
        raise ValueError(f"mass coefficient must be >= 0, got {coeff}")
    A = np.zeros((space.dim, space.dim))
    if coeff == 0.0:
        return A
    for tri in space.mesh.triangles:
        local = element_mass(space.mesh.nodes[tri], coeff)
        if space.kind == SCALAR_P1:
            _scatter_scalar(space, A, tri, local)
        else:
            block = np.zeros((6, 6))
            block[0:3, 0:3] = local
            block[3:6, 3:6] = local
            _scatter_vector(space, A, tri, block)
    return A


def assemble_laplace(space: FeSpace, coeff: float) -> np.ndarray:
    """Scalar stiffness matrix with constant coefficient; SPD on the free dofs."""
    if space.kind != SCALAR_P1:
        raise ValueError("assemble_laplace expects a scalar space")
    if coeff <= 0:
        raise ValueError(f"diffusion coefficient must be > 0, got {coeff}")
    A = np.zeros((space.dim, space.dim))
    for tri in space.mesh.triangles:
        _scatter_scalar(space, A, tri, element_stiffness(space.mesh.nodes[tri], coeff))
    return A


def assemble_elasticity(space: FeSpace, mu: float, lam: float) -> np.ndarray:
    """Linear elastic stiffness; SPD on the free dofs."""
    if space.kind != VECTOR_P1:
        raise ValueError("assemble_elasticity expects a vector space")
    if mu <= 0 or lam < 0:
        raise ValueError("assemble_elasticity needs mu > 0 and lambda >= 0")
    A = np.zeros((space.dim, space.dim))
    for tri in space.mesh.triangles:
        _scatter_vector(space, A, tri, element_elasticity(space.mesh.nodes[tri], mu, lam))
    return A


def assemble_divergence_coupling(vspace: FeSpace, qspace: FeSpace, alpha: float) -> np.ndarray:
    """Coupling D with D[i, j] = alpha * int (div phi_j) psi_i (pressure rows)."""
    if vspace.kind != VECTOR_P1 or qspace.kind != SCALAR_P1:
        raise ValueError("divergence coupling needs a vector and a scalar space")
    if vspace.mesh is not qspace.mesh:
        raise ValueError("divergence coupling requires both spaces on the same mesh")
    D = np.zeros((qspace.dim, vspace.dim))
    nfree = len(vspace.free_nodes)
    for tri in vspace.mesh.triangles:
        local = element_divergence(vspace.mesh.nodes[tri], alpha)
        pdofs = _scalar_dofs(qspace, tri)
        udofs = _scalar_dofs(vspace, tri)
        for i in range(3):
            if pdofs[i] < 0:
                continue
            for comp in range(2):
                for a in range(3):
                    if udofs[a] >= 0:
                        D[pdofs[i], udofs[a] + comp * nfree] += local[i, a + 3 * comp]
    return D


def _quad_points(coords) -> tuple[np.ndarray, np.ndarray]:
    """Edge midpoints and P1 values there (rows: points, cols: hat functions)."""
    c = np.asarray(coords, dtype=float)
    pts = np.array([
        0.5 * (c[0] + c[1]),
        0.5 * (c[1] + c[2]),
        0.5 * (c[2] + c[0]),
    ])
    vals = np.array([
        [0.5, 0.5, 0.0],
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 0.5],
    ])
    return pts, vals


def assemble_load(space: FeSpace, density) -> np.ndarray:
    """Load vector int density * phi_i via the 3-point edge-midpoint rule.

    For scalar spaces ``density(x, y)`` returns a float; for vector spaces a
    length-2 sequence.
    """
    out = np.zeros(space.dim)
    nfree = len(space.free_nodes)
    for tri in space.mesh.triangles:
        coords = space.mesh.nodes[tri]
        w = triangle_area(coords) / 3.0
        pts, vals = _quad_points(coords)
        dofs = _scalar_dofs(space, tri)
        for q in range(3):
            f = density(pts[q, 0], pts[q, 1])
            if space.kind == SCALAR_P1:
                for a in range(3):
                    if dofs[a] >= 0:
                        out[dofs[a]] += w * f * vals[q, a]
            else:
                fx, fy = f
                for a in range(3):
                    if dofs[a] >= 0:
                        out[dofs[a]] += w * fx * vals[q, a]
                        out[dofs[a] + nfree] += w * fy * vals[q, a]
    return out


def elementwise_divergence(vspace: FeSpace, u_free: np.ndarray) -> np.ndarray:
    """div u_h per triangle (constant for P1) from a free-dof displacement vector."""
    if vspace.kind != VECTOR_P1:
        raise ValueError("elementwise_divergence expects a vector space")
    u = np.asarray(u_free, dtype=float)
    if u.shape != (vspace.dim,):
        raise ValueError(f"displacement vector must have length {vspace.dim}")
    nfree = len(vspace.free_nodes)
    out = np.zeros(len(vspace.mesh.triangles))
    for t, tri in enumerate(vspace.mesh.triangles):
        g = p1_gradients(vspace.mesh.nodes[tri])
        dofs = _scalar_dofs(vspace, tri)
        div = 0.0
        for a in range(3):
            if dofs[a] >= 0:
                div += u[dofs[a]] * g[a, 0] + u[dofs[a] + nfree] * g[a, 1]
        out[t] = div
    return out


def assemble_nonlinear_permeability(qspace: FeSpace, vspace: FeSpace, u_free,
                                    kappa_fn, nu: float,
                                    bounds: tuple[float, float] | None = None) -> np.ndarray:
    """Pressure stiffness with coefficient kappa(div u_h)/nu evaluated per element.

    The dilatation-dependent coefficient is sampled on every element; a value
    outside (0, inf) or outside the caller-supplied bounds raises
    ``BoundViolationError``.
    """
    if qspace.mesh is not vspace.mesh:
        raise ValueError("spaces must share a mesh")
    if nu <= 0:
        raise ValueError("viscosity nu must be positive")
    dil = elementwise_divergence(vspace, u_free)
    A = np.zeros((qspace.dim, qspace.dim))
    for t, tri in enumerate(qspace.mesh.triangles):
        kappa = float(kappa_fn(dil[t]))
        if not np.isfinite(kappa) or kappa <= 0.0:
            raise BoundViolationError(
                f"permeability {kappa!r} at dilatation {dil[t]:.3e} is not positive"
            )
        if bounds is not None and not (bounds[0] <= kappa <= bounds[1]):
            raise BoundViolationError(
                f"permeability {kappa:.3e} leaves the declared bounds {bounds}"
            )
        _scatter_scalar(qspace, A, tri, element_stiffness(qspace.mesh.nodes[tri], kappa / nu))
    return A


def write_mesh_text(mesh: Mesh2D, path) -> None:
    """Plain-text export: node coordinates, then element node triples."""
    lines = [f"nodes {len(mesh.nodes)}"]
    for x, y in mesh.nodes:
        lines.append(f"{x!r} {y!r}")
    lines.append(f"triangles {len(mesh.triangles)}")
    for a, b, c in mesh.triangles:
        lines.append(f"{a} {b} {c}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
