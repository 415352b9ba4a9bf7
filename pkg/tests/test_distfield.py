import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import square_mesh
from morphrom import distfield
from morphrom.distfield import (build_index, check_tags, delta1, delta2, sample_points,
                                vector_distance_field, winding_number)
from morphrom.mesh import BoundaryPolyline, airfoil_polyline, plate_polyline


def square_poly(lo=0.0, hi=1.0, n=1, tag="wall"):
    s = np.linspace(lo, hi, n + 1)[:-1]
    pts = np.concatenate([np.column_stack([s, np.full(n, lo)]),
                          np.column_stack([np.full(n, hi), s]),
                          np.column_stack([s[::-1] + (hi - lo) / n, np.full(n, hi)]),
                          np.column_stack([np.full(n, lo), s[::-1] + (hi - lo) / n])])
    return BoundaryPolyline.from_named([pts], [[tag] * len(pts)])


def circle_poly(n=512, R=1.0):
    a = 2 * np.pi * np.arange(n) / n
    return BoundaryPolyline.from_named([R * np.column_stack([np.cos(a), np.sin(a)])], [["c"] * n])


def brute_unsigned(poly, x, tags=None):
    segs, tag = poly.segments
    if tags is not None:
        segs = segs[tag == tags]
    a, b = segs[:, 0], segs[:, 1]
    ab = b - a
    t = np.clip(np.einsum("qsi,si->qs", x[:, None, :] - a[None], ab) / np.einsum("si,si->s", ab, ab), 0, 1)
    p = a[None] + t[..., None] * ab[None]
    return np.hypot(*(p - x[:, None, :]).transpose(2, 0, 1)).min(axis=1)


def brute_inside(poly, x):
    # even-odd ray cast along +x over all loops
    inside = np.zeros(len(x), bool)
    for pts in poly.loops:
        a, b = pts, np.roll(pts, -1, axis=0)
        for p, q in zip(a, b):
            cond = (p[1] > x[:, 1]) != (q[1] > x[:, 1])
            xs = p[0] + (x[:, 1] - p[1]) * (q[0] - p[0]) / np.where(q[1] == p[1], 1, q[1] - p[1])
            inside ^= cond & (x[:, 0] < xs)
    return inside


def test_square_centre_distance():
    idx = build_index(square_poly())
    assert idx.unsigned_distance(np.array([[0.5, 0.5]]))[0] == pytest.approx(0.5, abs=1e-15)
    assert idx.unsigned_distance(np.array([[1.0, 0.0]]))[0] == 0.0


def test_random_queries_match_brute_force():
    poly = plate_polyline(0.3, 64)
    idx = build_index(poly)
    x = np.random.default_rng(0).uniform(-1.5, 1.5, (1000, 2))
    assert np.abs(idx.unsigned_distance(x) - brute_unsigned(poly, x)).max() <= 1e-12


def test_project_examples():
    poly = BoundaryPolyline.from_named([[[0, 0], [1, 0], [0.5, -1]]], [["s", "o", "o"]])
    idx = build_index(poly)
    s = idx.project(np.array([[0.5, 0.3]]), "s")
    assert np.allclose(s.proj, [[0.5, 0]]) and np.allclose(s.D, [[0, -0.3]])
    s = idx.project(np.array([[2.0, 0.0]]), "s")
    assert np.allclose(s.proj, [[1, 0]]) and np.allclose(s.D, [[-1, 0]])
    with pytest.raises(KeyError, match="unknown tag"):
        idx.project(np.array([[0.0, 0.0]]), "nope")


def test_tie_break_deterministic():
    idx = build_index(square_poly(n=4))
    q = np.array([[0.5, 0.5], [0.25, 0.5]])
    a = idx.project(q, "wall")
    b = build_index(square_poly(n=4)).project(q, "wall")
    assert np.array_equal(a.segment, b.segment) and np.array_equal(a.proj, b.proj)
    # equidistant from several sides: lowest segment id wins
    assert a.segment[0] == 1


def test_circle_signed_distance():
    idx = build_index(circle_poly())
    sag = 1 - np.cos(np.pi / 512)
    assert abs(idx.signed_distance(np.array([0.0, 0.0])) + 1) <= sag + 1e-15
    assert abs(idx.signed_distance(np.array([2.0, 0.0])) - 1) <= 1e-15


def test_signed_distance_brute_force():
    poly = airfoil_polyline(0.04, 0.4, 0.12, 40, n_far=64)
    idx = build_index(poly)
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.uniform(-6, 7, (250, 2)), rng.uniform([-0.1, -0.1], [1.1, 0.1], (250, 2))])
    expected = brute_unsigned(poly, x) * np.where(brute_inside(poly, x), -1, 1)
    assert np.abs(idx.signed_distance(x) - expected).max() <= 1e-12


def test_winding_number_nested():
    sq = square_poly(-1, 1).loops[0]
    assert winding_number(sq, np.array([[0.0, 0.0]]))[0] != 0
    assert winding_number(sq, np.array([[3.0, 0.0]]))[0] == 0


@given(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_signed_distance_lipschitz(p, q):
    idx = _plate_index()
    p, q = np.array(p), np.array(q)
    assert abs(idx.signed_distance(p) - idx.signed_distance(q)) <= np.hypot(*(p - q)) + 1e-10


_CACHE = {}


def _plate_index():
    if "plate" not in _CACHE:
        _CACHE["plate"] = build_index(plate_polyline(0.35, 64))
    return _CACHE["plate"]


def test_signed_negative_inside_convex():
    idx = build_index(circle_poly(64, 0.7))
    pts = np.random.default_rng(0).uniform(-0.3, 0.3, (50, 2))
    assert np.all(idx.signed_distance(pts) < 0)


def test_identity_vector_distance_zero(plate_coarse):
    idx = build_index(plate_coarse.boundary_polyline())
    s = vector_distance_field(idx, plate_coarse)
    assert np.abs(s.D).max() <= 1e-15
    assert delta1(idx, plate_coarse) <= 1e-15 and delta2(idx, plate_coarse) <= 1e-15


def test_offset_squares():
    mesh = square_mesh(4, -1, 1, tags="wall")
    idx = build_index(square_poly(-2, 2, tag="wall"))
    s = vector_distance_field(idx, mesh)
    assert np.allclose(s.distance, 1.0, atol=1e-14)
    assert delta2(idx, mesh) == pytest.approx(1.0, abs=1e-14)
    assert delta2(idx, mesh, "nodes_plus_9") == pytest.approx(1.0, abs=1e-14)


def test_per_tag_restriction_thin_airfoil():
    poly = airfoil_polyline(0.0, 0.4, 0.06, 30, n_far=32)
    idx = build_index(poly)
    rng = np.random.default_rng(5)
    x = np.column_stack([rng.uniform(0.2, 0.9, 300), rng.uniform(-0.02, 0.0, 300)])  # just below
    up = idx.project(x, "upper")
    segs, tags = poly.segments
    assert np.all(tags[up.segment] == poly.tag_names.index("upper"))
    ref = brute_unsigned(poly, x, poly.tag_names.index("upper"))
    assert np.abs(up.distance - ref).max() <= 1e-12
    # the other wing surface is closer for these points
    assert np.all(idx.project(x, "lower").distance < up.distance)


def test_nodes_plus_9_dominates(plate_coarse, plate_index):
    moved = plate_coarse.with_vertices(plate_coarse.vertices * 1.01)
    for f in (delta1, delta2):
        assert f(plate_index, moved, "nodes_plus_9") >= f(plate_index, moved, "nodes_only")
    assert len(sample_points(plate_coarse, "nodes_plus_9")[0]) == 11 * len(plate_coarse.boundary_edges)


def test_tag_mismatch(plate_coarse):
    with pytest.raises(ValueError, match="tag mismatch"):
        check_tags(plate_coarse, build_index(square_poly()))


def test_distance_queries_counted(plate_index):
    from morphrom import instrument

    with instrument.counting() as c:
        plate_index.unsigned_distance(np.zeros((7, 2)))
    assert c["distance_queries"] == 7


def test_csv_dump(tmp_path, plate_coarse, plate_index):
    distfield.dump_csv(plate_index, plate_coarse, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0].startswith("node")
    assert len(lines) > 1
