import numpy as np
import pytest
from dataclasses import replace

from conftest import square_mesh
from morphrom.distfield import build_index, delta2
from morphrom.fem import ElasticConfig
from morphrom.mesh import plate_polyline, signed_areas, synth_plate
from morphrom.morph import (PLATE_CONFIG, MorphConfig, DJg, evaluate_Jg, final_correction, gradient_check,
                            morph_step, MorphState, run)


def _offset_target():
    return build_index(square_mesh(1, -1.2, 1.2, tags="wall").boundary_polyline())


def test_reference_equals_target(plate_coarse):
    res = run(plate_coarse, plate_coarse.boundary_polyline(), PLATE_CONFIG)
    assert res.converged and res.iterations == 0
    assert np.array_equal(res.positions, plate_coarse.vertices)


def test_zero_gamma_does_not_move(plate_coarse, plate_index):
    cfg = replace(PLATE_CONFIG, gamma=0.0, max_iter=3)
    res = run(plate_coarse, plate_index, cfg)
    assert res.status == "max_iter" and res.iterations == 3
    assert np.array_equal(res.positions, plate_coarse.vertices)


def test_one_step_reduces_delta2():
    m = square_mesh(6, -1, 1, tags="wall")
    idx = _offset_target()
    cfg = MorphConfig(ElasticConfig(alpha=50.0, beta1=0.0), gamma=1.0)
    state = morph_step(MorphState(m, m.vertices.copy()), idx, cfg)
    assert state.history[-1]["delta2"] < delta2(idx, m)
    # the square grows: every boundary node moves outward
    b = m.boundary_vertices
    assert np.all(np.abs(state.positions[b]).max(axis=1) > 1.0)


def test_large_step_is_halved(plate_coarse, plate_index):
    m = plate_coarse
    state = morph_step(MorphState(m, m.vertices.copy()), plate_index, replace(PLATE_CONFIG, gamma=1000.0))
    g = state.history[-1]["gamma"]
    assert g < 1000.0 and np.log2(1000.0 / g) % 1 == 0
    assert np.all(signed_areas(state.positions, m.triangles) > 0)


def test_plate_vdf_converges(plate_vdf):
    res = plate_vdf
    assert res.converged and res.status == "converged"
    assert res.delta2 < PLATE_CONFIG.eps
    assert res.delta1 < 5 * PLATE_CONFIG.eps
    assert np.all(signed_areas(res.positions, res.reference.triangles) > 0)
    # the morphing lives on the mesh: boundary nodes end up on the target circle
    arc = res.reference.boundary_edges[res.reference.edge_tags == res.reference.tag_id("arc_right")]
    p = res.positions[np.unique(arc)]
    assert np.abs(np.hypot(p[:, 0] - 1, p[:, 1]) - 0.2).max() < PLATE_CONFIG.eps


def test_plate_sdf_converges_on_delta1(plate_ref, plate_index):
    res = run(plate_ref, plate_index, replace(PLATE_CONFIG, algorithm="sdf"))
    assert res.converged and res.delta1 < PLATE_CONFIG.eps
    # sdf only controls the normal distance: nodes slide along the target, so
    # the per-tag distance stays large where arcs and walls meet
    assert res.delta2 > 10 * PLATE_CONFIG.eps


def test_final_correction(plate_vdf, plate_index):
    fixed = final_correction(plate_vdf, plate_index, PLATE_CONFIG)
    assert fixed.corrected
    assert fixed.delta2 <= 1e-10
    assert np.all(signed_areas(fixed.positions, fixed.reference.triangles) > 0)
    # interior moves are small corrections
    assert np.abs(fixed.positions - plate_vdf.positions).max() < 10 * PLATE_CONFIG.eps


def test_history_csv_deterministic(plate_coarse, plate_index):
    cfg = replace(PLATE_CONFIG, max_iter=5)
    a = run(plate_coarse, plate_index, cfg).history_csv()
    b = run(plate_coarse, plate_index, cfg).history_csv()
    assert a == b
    lines = a.splitlines()
    assert lines[0] == "iteration,delta1,delta2,max_u,quality_max,gamma"
    assert len(lines) == 7


def test_divergence_stop(plate_coarse, plate_index, monkeypatch):
    import morphrom.morph as morph

    def rising(state, index, cfg, targets=None):
        rec = {"iteration": state.iteration + 1, "delta1": 1.0, "delta2": 1.0 + state.iteration,
               "max_u": 0.0, "quality_max": 1.0, "gamma": cfg.gamma}
        return MorphState(state.reference, state.positions, state.iteration + 1, state.history + [rec])

    monkeypatch.setattr(morph, "morph_step", rising)
    res = run(plate_coarse, plate_index, replace(PLATE_CONFIG, divergence_window=5))
    assert res.status == "diverged" and not res.converged
    assert res.iterations == 5


@pytest.mark.parametrize("kw", [dict(algorithm="x"), dict(gamma=-1.0), dict(eps=0.0), dict(max_iter=-1),
                                dict(sampling="nope")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        MorphConfig(**kw)


def test_config_roundtrip():
    assert MorphConfig.from_dict(PLATE_CONFIG.to_dict()) == PLATE_CONFIG


def test_tag_mismatch_rejected(unit_square):
    with pytest.raises(ValueError, match="tag mismatch"):
        run(unit_square, plate_polyline(0.3), PLATE_CONFIG)


def test_Jg_and_derivative(plate_coarse):
    idx = build_index(plate_coarse.boundary_polyline())
    # the distance is negative inside its own domain
    assert evaluate_Jg(plate_coarse, idx) < 0
    assert DJg(plate_coarse, idx, np.zeros((plate_coarse.n_vertices, 2))) == 0.0
    # on the target boundary g = 0, so any boundary velocity has zero derivative
    v = np.random.default_rng(0).standard_normal((plate_coarse.n_vertices, 2))
    assert abs(DJg(plate_coarse, idx, v)) < 1e-12


def test_gradient_check_small_case():
    m = synth_plate(0.5, 0.1)
    idx = build_index(plate_polyline(0.3, 256))
    rng = np.random.default_rng(1)
    v = np.zeros((m.n_vertices, 2))
    b = m.boundary_vertices
    x = m.vertices[b]
    for k in range(2):
        a, w, ph = rng.standard_normal(3)
        v[b, k] = a * np.cos(w * x[:, 0] + ph) * np.cos(w * x[:, 1])
    ana, num = gradient_check(m, idx, v)
    assert abs(ana - num) <= 1e-3 * abs(num)


def test_dilation_of_square():
    # J for a square against a larger square target: every point is inside, g = -(1.2 - max|x|)
    m = square_mesh(4, -1, 1, tags="wall")
    idx = _offset_target()
    v = m.vertices.copy()  # radial dilation
    ana = DJg(m, idx, v, n_gauss=4)
    # boundary: g = -0.2, v.n = 1 on every side, perimeter 8
    assert ana == pytest.approx(-0.2 * 8, rel=1e-12)
