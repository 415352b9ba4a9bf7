"""P1 finite elements for the penalised plane-stress elasticity problems.

Displacement unknowns are interleaved: ``u[2 i]`` and ``u[2 i + 1]`` are the
x and y components at vertex ``i``. Boundary integrals use edge-constant
outward normals and 2-point Gauss quadrature.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .instrument import bump

GAUSS_S = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
GAUSS_W = np.array([0.5, 0.5])
EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


class FemError(RuntimeError):
    pass


@dataclass(frozen=True)
class ElasticConfig:
    """Material, penalty and matching weights of the morphing operator."""

    E: float = 1.0
    nu: float = 0.3
    alpha: float = 200.0
    beta1: float = 0.0
    beta2: float = 1.0
    variable_E: bool = False
    h_ref: Optional[float] = None
    line_form: str = "normal"  # "normal": (D.n)(v.n); "full": D.v

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"E must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"nu must lie in (-1, 0.5), got {self.nu}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("matching weights must be non-negative")
        if self.line_form not in ("normal", "full"):
            raise ValueError(f"unknown line_form {self.line_form!r}")
        if self.h_ref is not None and not self.h_ref > 0:
            raise ValueError("h_ref must be positive")

    @property
    def lame(self):
        """``(2 mu, lam)`` so that sigma = 2 mu eps + lam tr(eps) I."""
        return self.E / (1 + self.nu), self.E * self.nu / ((1 + self.nu) * (1 - self.nu))

    def to_dict(self):
        return asdict(self)


def _constitutive(E, nu):
    """Voigt matrix for (eps_xx, eps_yy, 2 eps_xy), one per element if E is an array."""
    E = np.atleast_1d(np.asarray(E, dtype=float))
    two_mu = E / (1 + nu)
    lam = E * nu / ((1 + nu) * (1 - nu))
    D = np.zeros((len(E), 3, 3))
    D[:, 0, 0] = D[:, 1, 1] = two_mu + lam
    D[:, 0, 1] = D[:, 1, 0] = lam
    D[:, 2, 2] = 0.5 * two_mu
    return D


def p1_gradients(vertices, triangles):
    """Signed areas ``(T,)`` and shape-function gradients ``(T, 3, 2)``."""
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    g = np.empty((len(triangles), 3, 2))
    # degenerate elements give inf/nan gradients; callers check the areas
    with np.errstate(divide="ignore", invalid="ignore"):
        g[:, 1, 0] = e2[:, 1] / det
        g[:, 1, 1] = -e2[:, 0] / det
        g[:, 2, 0] = -e1[:, 1] / det
        g[:, 2, 1] = e1[:, 0] / det
        g[:, 0] = -g[:, 1] - g[:, 2]
    return 0.5 * det, g


def _check_orientation(area):
    bad = np.nonzero(area <= 0)[0]
    if len(bad):
        raise FemError(f"inverted or degenerate element {int(bad[0])}")


def strain_stress(coords, u, E=1.0, nu=0.3):
    """Constant strain and stress tensors of a P1 triangle.

    ``coords`` and ``u`` are ``(3, 2)`` vertex positions and displacements.
    """
    coords = np.asarray(coords, dtype=float)
    area, g = p1_gradients(coords, np.array([[0, 1, 2]]))
    if area[0] == 0:
        raise FemError("zero-area element")
    grad_u = np.asarray(u, dtype=float).T @ g[0]  # grad_u[i, j] = du_i/dx_j
    eps = 0.5 * (grad_u + grad_u.T)
    sigma = E / (1 + nu) * eps + E * nu / ((1 + nu) * (1 - nu)) * np.trace(eps) * np.eye(2)
    return eps, sigma


def _strain_matrix(g):
    """``(T, 3, 6)`` map from interleaved element dofs to Voigt strain."""
    T = len(g)
    B = np.zeros((T, 3, 6))
    B[:, 0, 0::2] = g[:, :, 0]
    B[:, 1, 1::2] = g[:, :, 1]
    B[:, 2, 0::2] = g[:, :, 1]
    B[:, 2, 1::2] = g[:, :, 0]
    return B


def element_diameters(vertices, triangles):
    p = vertices[triangles]
    e = p[:, [1, 2, 0]] - p
    return np.hypot(e[..., 0], e[..., 1]).max(axis=1)


def element_moduli(vertices, triangles, cfg):
    if not cfg.variable_E:
        return np.full(len(triangles), cfg.E)
    h = element_diameters(vertices, triangles)
    h_ref = cfg.h_ref if cfg.h_ref is not None else float(np.median(h))
    return cfg.E * h_ref / h


def _dof_pairs(conn, nloc):
    """Row/col index arrays for element blocks given vertex connectivity."""
    dofs = np.empty((len(conn), 2 * nloc), dtype=np.int64)
    dofs[:, 0::2] = 2 * conn
    dofs[:, 1::2] = 2 * conn + 1
    rows = np.repeat(dofs, 2 * nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, 2 * nloc)).ravel()
    return rows, cols


def assemble_stiffness(vertices, triangles, cfg):
    """Volume term: integral of sigma(u) : eps(v)."""
    area, g = p1_gradients(vertices, triangles)
    _check_orientation(area)
    B = _strain_matrix(g)
    D = _constitutive(element_moduli(vertices, triangles, cfg), cfg.nu)
    Ke = area[:, None, None] * np.einsum("tki,tkl,tlj->tij", B, D, B)
    rows, cols = _dof_pairs(triangles, 3)
    n = 2 * len(vertices)
    return sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsc()


def edge_geometry(vertices, edges):
    """Lengths ``(B,)`` and outward unit normals ``(B, 2)`` of oriented boundary edges."""
    t = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    L = np.hypot(t[:, 0], t[:, 1])
    n = np.stack([t[:, 1], -t[:, 0]], axis=1) / L[:, None]
    return L, n


def assemble_normal_penalty(vertices, edges, alpha):
    """alpha * integral over the boundary of (u.n)(v.n)."""
    L, n = edge_geometry(vertices, edges)
    nn = n[:, :, None] * n[:, None, :]
    Ke = alpha * L[:, None, None, None, None] * EDGE_MASS[None, :, None, :, None] * nn[:, None, :, None, :]
    Ke = Ke.reshape(len(edges), 4, 4)
    rows, cols = _dof_pairs(edges, 2)
    N = 2 * len(vertices)
    return sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(N, N)).tocsc()


def assemble_operator(mesh, cfg):
    """Stiffness plus normal boundary penalty on the mesh as currently placed."""
    K = assemble_stiffness(mesh.vertices, mesh.triangles, cfg)
    P = assemble_normal_penalty(mesh.vertices, mesh.boundary_edges, cfg.alpha)
    return (K + P).tocsc()


def _scatter_edges(n_vertices, edges, f):
    """Accumulate per-edge nodal vectors ``f`` (B, 2, 2) into an interleaved vector."""
    out = np.zeros((n_vertices, 2))
    np.add.at(out, edges[:, 0], f[:, 0])
    np.add.at(out, edges[:, 1], f[:, 1])
    return out.ravel()


def boundary_gauss_points(vertices, edges):
    """``(B, 2, 2)`` Gauss points on every boundary edge."""
    a = vertices[edges[:, 0]]
    b = vertices[edges[:, 1]]
    return a[:, None, :] + GAUSS_S[None, :, None] * (b - a)[:, None, :]


def assemble_rhs_sdf(mesh, index):
    """Load vector of  -integral d (v.n) ds  with d the target signed distance."""
    v = mesh.vertices
    e = mesh.boundary_edges
    L, n = edge_geometry(v, e)
    xg = boundary_gauss_points(v, e)
    d = index.signed_distance(xg.reshape(-1, 2)).reshape(-1, 2)
    phi = np.stack([1.0 - GAUSS_S, GAUSS_S], axis=1)  # phi[g, a]
    w = (L[:, None] * GAUSS_W[None, :] * d) @ phi  # (B, 2) integral of d phi_a
    return _scatter_edges(len(v), e, -w[:, :, None] * n[:, None, :])


def incident_edges(mesh, vertex):
    return np.nonzero(np.any(mesh.boundary_edges == vertex, axis=1))[0]


def assemble_rhs_points(mesh, targets, beta1):
    """beta1 * sum_k integral over the two boundary edges at tracked vertex k of
    (P_k - x_k) . v ds, with targets a name -> point mapping."""
    n = mesh.n_vertices
    if beta1 == 0 or not targets:
        return np.zeros(2 * n)
    v = mesh.vertices
    e = mesh.boundary_edges
    L, _ = edge_geometry(v, e)
    out = np.zeros((n, 2))
    for name, P in sorted(targets.items()):
        if name not in mesh.tracked_points:
            raise KeyError(f"mesh has no tracked point {name!r}")
        k = int(mesh.tracked_points[name])
        edges = incident_edges(mesh, k)
        if len(edges) == 0:
            raise FemError(f"tracked vertex {k} is not on the boundary")
        c = np.asarray(P, dtype=float) - v[k]
        for j in edges:
            out[e[j, 0]] += beta1 * c * L[j] / 2
            out[e[j, 1]] += beta1 * c * L[j] / 2
    return out.ravel()


def assemble_rhs_lines(mesh, D_edge, beta2, form="normal"):
    """Line-matching load vector from vector distances at edge endpoints.

    ``D_edge`` is ``(B, 2, 2)``: D at the start and end node of every boundary
    edge, computed with that edge's tag; D varies linearly along the edge.
    ``form="normal"`` gives beta2 * integral (D.n)(v.n), ``form="full"`` gives
    beta2 * integral D.v.
    """
    v = mesh.vertices
    e = mesh.boundary_edges
    D_edge = np.asarray(D_edge, dtype=float)
    if D_edge.shape != (len(e), 2, 2):
        raise FemError(f"expected vector distances of shape {(len(e), 2, 2)}, got {D_edge.shape}")
    L, n = edge_geometry(v, e)
    if form == "normal":
        g = np.einsum("bai,bi->ba", D_edge, n)
        w = L[:, None] * (g @ EDGE_MASS)
        f = w[:, :, None] * n[:, None, :]
    elif form == "full":
        f = L[:, None, None] * np.einsum("ab,xbi->xai", EDGE_MASS, D_edge)
    else:
        raise ValueError(f"unknown line form {form!r}")
    return beta2 * _scatter_edges(len(v), e, f)


class Factorization:
    """Sparse LU of an operator; every construction is counted."""

    def __init__(self, A):
        self.A = sp.csc_matrix(A)
        try:
            self.lu = splu(self.A)
        except RuntimeError as exc:
            raise FemError(f"singular system: {exc}") from exc
        bump("factorizations")

    def solve(self, b, rtol=1e-8):
        b = np.asarray(b, dtype=float)
        x = self.lu.solve(b)
        nb = np.linalg.norm(b)
        if nb > 0:
            res = np.linalg.norm(self.A @ x - b) / nb
            if not np.isfinite(res) or res > rtol:
                # one step of iterative refinement before giving up
                x = x + self.lu.solve(b - self.A @ x)
                res = np.linalg.norm(self.A @ x - b) / nb
                if not np.isfinite(res) or res > rtol:
                    raise FemError(f"solve residual {res:.3g} exceeds {rtol:g}")
        return x


def solve(A, b, rtol=1e-8):
    """Direct solve with a relative residual guarantee."""
    if not np.any(b):
        return np.zeros_like(np.asarray(b, dtype=float))
    return Factorization(A).solve(b, rtol)


def assemble_mass(mesh, vector=False):
    """Consistent P1 mass matrix; ``vector=True`` gives the interleaved 2-component version."""
    area, _ = p1_gradients(mesh.vertices, mesh.triangles)
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    Me = area[:, None, None] * local[None]
    t = mesh.triangles
    n = mesh.n_vertices
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    M = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return sp.kron(M, sp.identity(2), format="csr") if vector else M


def assemble_boundary_mass(mesh, vector=False):
    """Consistent P1 mass matrix of the boundary trace."""
    e = mesh.boundary_edges
    L, _ = edge_geometry(mesh.vertices, e)
    Me = L[:, None, None] * EDGE_MASS[None]
    n = mesh.n_vertices
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    M = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return sp.kron(M, sp.identity(2), format="csr") if vector else M


def solve_dirichlet_correction(mesh, boundary_values, cfg, nodes=None):
    """Elastic extension of prescribed boundary displacements.

    Solves the pure stiffness problem with ``u = boundary_values`` on the
    boundary nodes (``(nb, 2)`` in the order of ``nodes``, default all
    boundary vertices sorted).
    """
    n = mesh.n_vertices
    nodes = mesh.boundary_vertices if nodes is None else np.asarray(nodes, dtype=np.int64)
    g = np.asarray(boundary_values, dtype=float).reshape(len(nodes), 2)
    u = np.zeros((n, 2))
    u[nodes] = g
    if not np.any(g):
        return u
    K = assemble_stiffness(mesh.vertices, mesh.triangles, cfg)
    fixed = np.zeros(2 * n, dtype=bool)
    fixed[2 * nodes] = fixed[2 * nodes + 1] = True
    free = ~fixed
    flat = u.ravel()
    if free.any():
        Kff = K[free][:, free]
        rhs = -(K[free][:, fixed] @ flat[fixed])
        flat[free] = Factorization(Kff).solve(rhs) if np.any(rhs) else 0.0
    return flat.reshape(n, 2)
