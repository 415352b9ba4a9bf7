import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from conftest import square_mesh
from morphrom import instrument
from morphrom.distfield import build_index, edge_vector_distance
from morphrom.fem import (ElasticConfig, FemError, Factorization, assemble_boundary_mass,
                          assemble_mass, assemble_operator, assemble_rhs_lines, assemble_rhs_points,
                          assemble_rhs_sdf, assemble_stiffness, edge_geometry, element_moduli, solve,
                          solve_dirichlet_correction, strain_stress)
from morphrom.mesh import Mesh2D, synth_airfoil

TRI = np.array([[0.0, 0.0], [1.0, 0.0], [0.2, 0.9]])


def test_strain_translation_and_rotation():
    eps, sig = strain_stress(TRI, np.tile([0.3, -0.7], (3, 1)))
    assert np.allclose(eps, 0) and np.allclose(sig, 0)
    rot = 0.01 * np.column_stack([TRI[:, 1], -TRI[:, 0]])
    eps, _ = strain_stress(TRI, rot)
    assert np.abs(eps).max() < 1e-15


def test_uniaxial():
    eps, sig = strain_stress(TRI, np.column_stack([TRI[:, 0], np.zeros(3)]), E=1.0, nu=0.0)
    assert np.allclose(eps, np.diag([1, 0])) and np.allclose(sig, np.diag([1, 0]))


def test_plane_stress_coefficients():
    eps, sig = strain_stress(TRI, np.column_stack([TRI[:, 0], TRI[:, 1]]), E=2.0, nu=0.25)
    # E/(1+nu) eps + E nu/((1+nu)(1-nu)) tr(eps) I with eps = I
    expected = 2 / 1.25 + 2 * 0.25 / (1.25 * 0.75) * 2
    assert np.allclose(sig, expected * np.eye(2))


def test_degenerate_element():
    with pytest.raises(FemError):
        strain_stress([[0, 0], [1, 0], [2, 0]], np.zeros((3, 2)))


@pytest.mark.parametrize("kw", [dict(E=0), dict(nu=0.5), dict(nu=-1), dict(alpha=0), dict(beta1=-1),
                                dict(line_form="x"), dict(h_ref=0.0)])
def test_config_ranges(kw):
    with pytest.raises(ValueError):
        ElasticConfig(**kw)


def test_operator_symmetric_and_renumbering(plate_coarse):
    cfg = ElasticConfig(alpha=200.0)
    A = assemble_operator(plate_coarse, cfg)
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    perm = np.random.default_rng(0).permutation(plate_coarse.n_vertices)
    inv = np.argsort(perm)
    m2 = Mesh2D(plate_coarse.vertices[perm], inv[plate_coarse.triangles], inv[plate_coarse.boundary_edges],
                [plate_coarse.tag_names[t] for t in plate_coarse.edge_tags])
    A2 = assemble_operator(m2, cfg)
    dof = np.empty(2 * len(perm), dtype=int)
    dof[0::2], dof[1::2] = 2 * perm, 2 * perm + 1
    assert abs(A2 - A[dof][:, dof]).max() <= 1e-12 * abs(A).max()


def test_translation_energy_unit_square(unit_square):
    A = assemble_operator(unit_square, ElasticConfig(alpha=7.0))
    u = np.tile([1.0, 0.0], unit_square.n_vertices)
    assert u @ A @ u == pytest.approx(2 * 7.0, rel=1e-12)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_rigid_motions_only_see_penalty(tx, ty, w):
    m = square_mesh(3, -1, 1)
    alpha = 3.0
    u = (np.array([tx, ty]) + w * np.column_stack([-m.vertices[:, 1], m.vertices[:, 0]])).ravel()
    K = assemble_stiffness(m.vertices, m.triangles, ElasticConfig())
    assert abs(u @ K @ u) <= 1e-10 * max(1.0, u @ u)
    A = assemble_operator(m, ElasticConfig(alpha=alpha))
    # alpha * boundary integral of (u.n)^2, exact for the P1 trace
    L, n = edge_geometry(m.vertices, m.boundary_edges)
    U = u.reshape(-1, 2)
    ua = np.einsum("bi,bi->b", U[m.boundary_edges[:, 0]], n)
    ub = np.einsum("bi,bi->b", U[m.boundary_edges[:, 1]], n)
    ref = alpha * np.sum(L * (ua * ua + ua * ub + ub * ub) / 3)
    assert u @ A @ u == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_plate_spd(plate_coarse):
    A = assemble_operator(plate_coarse, ElasticConfig(alpha=200.0)).toarray()
    assert np.linalg.eigvalsh(A)[0] > 0


def test_inverted_element_reported():
    m = square_mesh(2)
    v = m.vertices.copy()
    v[4] = [2.0, 2.0]  # centre vertex pushed outside
    with pytest.raises(FemError, match="inverted or degenerate element"):
        assemble_operator(m.with_vertices(v), ElasticConfig())


def test_rhs_sdf_zero_on_own_boundary(plate_coarse):
    idx = build_index(plate_coarse.boundary_polyline())
    assert np.abs(assemble_rhs_sdf(plate_coarse, idx)).max() <= 1e-14


def test_rhs_supported_on_boundary(plate_coarse, plate_index):
    b = assemble_rhs_sdf(plate_coarse, plate_index).reshape(-1, 2)
    interior = np.setdiff1d(np.arange(plate_coarse.n_vertices), plate_coarse.boundary_vertices)
    assert not np.any(b[interior])
    assert np.any(b)


def test_rhs_points(plate_coarse):
    tp = plate_coarse.tracked_points
    matched = {k: plate_coarse.vertices[v] for k, v in tp.items()}
    assert not np.any(assemble_rhs_points(plate_coarse, matched, 10.0))
    moved = {k: p + [0.1, -0.05] for k, p in matched.items()}
    assert not np.any(assemble_rhs_points(plate_coarse, moved, 0.0))
    b1 = assemble_rhs_points(plate_coarse, moved, 1.5)
    assert np.allclose(assemble_rhs_points(plate_coarse, moved, 3.0), 2 * b1)
    # total force = beta1 * (P - x) * (sum of the two incident edge lengths), per point
    total = b1.reshape(-1, 2).sum(axis=0)
    L, _ = edge_geometry(plate_coarse.vertices, plate_coarse.boundary_edges)
    length = sum(L[np.any(plate_coarse.boundary_edges == v, axis=1)].sum() for v in tp.values())
    assert np.allclose(total, 1.5 * np.array([0.1, -0.05]) * length)


def test_rhs_lines_offset_squares():
    m = square_mesh(4, -1, 1, tags="wall")
    idx = build_index(square_mesh(1, -2, 2, tags="wall").boundary_polyline())
    D = edge_vector_distance(idx, m)
    assert not np.any(assemble_rhs_lines(m, np.zeros_like(D), 1.0))
    b = assemble_rhs_lines(m, D, 2.5).reshape(-1, 2)
    # mid-node of the right edge: D.n = 1 on both incident edges, so the x-load is beta2 * h
    # (corner nodes project onto either side, which changes D.n next to them)
    mid = np.nonzero(np.isclose(m.vertices[:, 0], 1.0) & np.isclose(m.vertices[:, 1], 0.0))[0]
    assert np.allclose(b[mid], [[2.5 * 0.5, 0.0]])
    assert np.allclose(assemble_rhs_lines(m, D, 5.0), 2 * b.ravel())


def test_line_forms():
    m = square_mesh(2, -1, 1, tags="wall")
    nb = len(m.boundary_edges)
    _, n = edge_geometry(m.vertices, m.boundary_edges)
    D_normal = np.repeat(0.3 * n[:, None, :], 2, axis=1)
    assert np.allclose(assemble_rhs_lines(m, D_normal, 1.0, "normal"),
                       assemble_rhs_lines(m, D_normal, 1.0, "full"))
    t = np.column_stack([-n[:, 1], n[:, 0]])
    D_tan = D_normal + np.repeat(0.2 * t[:, None, :], 2, axis=1)
    assert not np.allclose(assemble_rhs_lines(m, D_tan, 1.0, "normal"),
                           assemble_rhs_lines(m, D_tan, 1.0, "full"))
    with pytest.raises(FemError):
        assemble_rhs_lines(m, np.zeros((nb + 1, 2, 2)), 1.0)


def test_solve_zero_and_manufactured(plate_coarse):
    A = assemble_operator(plate_coarse, ElasticConfig(alpha=200.0))
    assert not np.any(solve(A, np.zeros(A.shape[0])))
    x = np.random.default_rng(2).standard_normal(A.shape[0])
    got = solve(A, A @ x)
    assert np.linalg.norm(got - x) <= 1e-10 * np.linalg.norm(x)


def test_galerkin_consistency(plate_coarse, plate_index):
    A = assemble_operator(plate_coarse, ElasticConfig(alpha=200.0))
    b = assemble_rhs_sdf(plate_coarse, plate_index)
    x = solve(A, b)
    V = np.random.default_rng(4).standard_normal((5, len(b)))
    assert np.allclose(V @ (A @ x), V @ b, rtol=0, atol=1e-10 * np.abs(V @ b).max())


def test_airfoil_residual():
    m = synth_airfoil(0.02, 0.4, 0.12, 16)
    A = assemble_operator(m, ElasticConfig(E=0.1, alpha=500.0))
    b = np.random.default_rng(0).standard_normal(A.shape[0])
    x = solve(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_factorizations_counted(unit_square):
    A = assemble_operator(unit_square, ElasticConfig())
    with instrument.counting() as c:
        f = Factorization(A)
        f.solve(np.ones(A.shape[0]))
        f.solve(np.ones(A.shape[0]) * 2)
    assert c["factorizations"] == 1


def test_mass_totals(unit_square, plate_coarse):
    for m, area, perim in ((unit_square, 1.0, 4.0), (plate_coarse, plate_coarse.areas().sum(), None)):
        one = np.ones(m.n_vertices)
        assert one @ assemble_mass(m) @ one == pytest.approx(area, abs=1e-12)
        Mb = assemble_boundary_mass(m)
        assert one @ Mb @ one == pytest.approx(perim or m.boundary_length(), abs=1e-12)
        Mv = assemble_mass(m, vector=True)
        assert np.linalg.eigvalsh(Mv.toarray())[0] > 0 if m.n_vertices < 200 else sp.issparse(Mv)


def test_consistent_vs_lumped_mass():
    errs = []
    for n in (4, 8, 16):
        m = square_mesh(n)
        f = np.sin(2 * m.vertices[:, 0]) * np.cos(m.vertices[:, 1])
        M = assemble_mass(m)
        lumped = np.asarray(M.sum(axis=1)).ravel()
        errs.append(abs(f @ M @ f - f @ (lumped * f)))
    assert errs[1] < errs[0] / 3 and errs[2] < errs[1] / 3


def test_dirichlet_correction(plate_coarse):
    cfg = ElasticConfig()
    nodes = plate_coarse.boundary_vertices
    assert not np.any(solve_dirichlet_correction(plate_coarse, np.zeros((len(nodes), 2)), cfg))
    c = np.array([0.03, -0.01])
    u = solve_dirichlet_correction(plate_coarse, np.tile(c, (len(nodes), 1)), cfg)
    assert np.allclose(u, c, atol=1e-12)
    A = np.array([[0.02, -0.01], [0.015, 0.03]])
    aff = plate_coarse.vertices @ A.T + [0.01, 0.0]
    u = solve_dirichlet_correction(plate_coarse, aff[nodes], cfg)
    assert np.abs(u - aff).max() <= 1e-10


def test_variable_modulus(plate_coarse):
    cfg = ElasticConfig(E=2.0, variable_E=True, h_ref=0.1)
    Ek = element_moduli(plate_coarse.vertices, plate_coarse.triangles, cfg)
    from morphrom.fem import element_diameters

    h = element_diameters(plate_coarse.vertices, plate_coarse.triangles)
    assert np.allclose(Ek, 2.0 * 0.1 / h)
    A = assemble_operator(plate_coarse, cfg).toarray()
    assert np.linalg.eigvalsh(A)[0] > 0
