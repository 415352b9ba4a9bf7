import csv
import json

import numpy as np
import pytest

from morphrom import families
from morphrom.cli import EXIT_ERROR, EXIT_MAXITER, EXIT_OK, EXIT_OOD, ConfigError, load_config, main, morph_config
from morphrom.mesh import save_polyline, square_notch_polyline
from morphrom.regress import q2_score


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def plate_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("plate")
    assert _run("synth", "--family", "plate", "--n", 9, "--set", "n_test=3", "--set", "h=0.1",
                "--out", root / "fam") == EXIT_OK
    assert _run("offline", "--manifest", root / "fam" / "manifest.json", "--out", root / "off") == EXIT_OK
    return root


def test_synth_plate_radii(tmp_path):
    assert _run("synth", "--family", "plate", "--n", 10, "--out", tmp_path) == EXIT_OK
    man = json.loads((tmp_path / "manifest.json").read_text())
    radii = [s["params"]["R"] for s in man["samples"]]
    assert np.allclose(radii, 0.2 + 0.06 * np.arange(1, 11))
    assert (tmp_path / "reference.json").exists()
    assert all((tmp_path / s["file"]).exists() for s in man["samples"])


def test_synth_seed_reproducible(tmp_path):
    for d in ("a", "b", "c"):
        seed = 3 if d != "c" else 4
        assert _run("synth", "--family", "airfoil", "--n", 4, "--seed", seed, "--out", tmp_path / d) == EXIT_OK
    a, b, c = ((tmp_path / d / "manifest.json").read_text() for d in "abc")
    assert a == b and a != c


def test_halton_families_deterministic():
    assert np.array_equal(families.airfoil_params(16, 0), families.airfoil_params(16, 0))
    p = families.airfoil_params(64, 1)
    lo = [b[0] for b in families.AIRFOIL_BOX.values()]
    hi = [b[1] for b in families.AIRFOIL_BOX.values()]
    assert np.all(p >= lo) and np.all(p <= hi)
    assert not np.array_equal(families.flow_params(8, 0), families.flow_params(8, 1))


def test_unknown_config_key(tmp_path, capsys):
    assert _run("synth", "--set", "nope=1", "--out", tmp_path) == EXIT_ERROR
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["status"] == "error" and "nope" in err["error"]
    # nested morph keys are checked when the preset is resolved
    with pytest.raises(ConfigError, match="bogus"):
        morph_config(load_config("offline", overrides=["morph.elastic.bogus=1"]))


def test_config_file_and_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"q": 3, "morph": {"gamma": 4.0}}))
    cfg = load_config("offline", path, ["morph.elastic.alpha=150"])
    assert cfg["q"] == 3 and cfg["morph"] == {"gamma": 4.0, "elastic": {"alpha": 150}}


def test_morph_to_self(plate_run, tmp_path):
    fam = plate_run / "fam"
    ref = fam / "reference.json"
    assert _run("morph", "--reference", ref, "--target", ref, "--out", tmp_path) == EXIT_OK
    res = json.loads((tmp_path / "result.json").read_text())
    assert res["iterations"] == 0 and res["converged"]
    for f in ("history.csv", "timing.json", "morphed_mesh.json", "morphed.vtk"):
        assert (tmp_path / f).exists()


def test_morph_max_iter(plate_run, tmp_path, capsys):
    fam = plate_run / "fam"
    code = _run("morph", "--reference", fam / "reference.json", "--target", fam / "targets" / "sample_000.json",
                "--set", "morph.max_iter=3", "--out", tmp_path)
    assert code == EXIT_MAXITER
    assert json.loads(capsys.readouterr().err.strip())["status"] == "max_iter"


def test_offline_artifacts(plate_run):
    off = plate_run / "off"
    rep = json.loads((off / "offline_report.json").read_text())
    assert len(rep["iterations"]) == 6 and rep["r"] >= 1
    assert len(list((off / "histories").glob("*.csv"))) == 6


def test_online_batch(plate_run, tmp_path):
    off = plate_run / "off"
    code = _run("online", "--model", off / "model.json", "--targets", plate_run / "fam" / "manifest.json",
                "--offline-report", off / "offline_report.json", "--out", tmp_path)
    assert code == EXIT_OK
    with open(tmp_path / "online.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 3 and all(r["status"] == "converged" for r in rows)
    bench = json.loads((tmp_path / "benchmark.json").read_text())
    assert bench["counters"]["online"]["factorizations"] == 0
    assert bench["ratio_avg"] > 1


def test_online_out_of_distribution(plate_run, tmp_path):
    tdir = tmp_path / "targets"
    save_polyline(square_notch_polyline(0.35), tdir / "notch.json")
    code = _run("online", "--model", plate_run / "off" / "model.json", "--targets", tdir,
                "--set", "max_iter=5", "--set", "delta_grad=1e6", "--out", tmp_path / "o")
    assert code == EXIT_OOD
    code = _run("online", "--model", plate_run / "off" / "model.json", "--targets", tdir,
                "--set", "max_iter=5", "--set", "delta_grad=0.0", "--out", tmp_path / "m")
    assert code == EXIT_MAXITER
    rep = json.loads((tmp_path / "o" / "online_report.json").read_text())
    assert rep[0]["status"] == "out_of_distribution" and rep[0]["recommendation"] != "none"


def test_report(plate_run, tmp_path):
    assert _run("report", "--run", plate_run / "off", "--out", tmp_path / "a") == EXIT_OK
    assert _run("report", "--run", plate_run / "off", "--out", tmp_path / "b") == EXIT_OK
    for name in ("convergence.svg", "eigenvalues.svg", "converged_samples.svg"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes()
        assert a.lstrip().startswith(b"<?xml")


def test_report_missing_inputs(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert _run("report", "--run", tmp_path / "empty", "--out", tmp_path / "r") == EXIT_ERROR
    assert "eigenvalues.csv" in capsys.readouterr().err


def test_learn_predict_airfoil(tmp_path):
    fam = tmp_path / "fam"
    assert _run("synth", "--family", "airfoil", "--n", 12, "--set", "n_test=4", "--out", fam) == EXIT_OK
    assert _run("offline", "--manifest", fam / "manifest.json", "--preset", "airfoil_family",
                "--set", "q=3", "--out", tmp_path / "off") == EXIT_OK
    assert _run("learn", "--model", tmp_path / "off" / "model.json", "--manifest", fam / "manifest.json",
                "--out", tmp_path / "scalar.json") == EXIT_OK
    code = _run("predict", "--model", tmp_path / "scalar.json", "--manifest", fam / "manifest.json",
                "--out", tmp_path / "pred")
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "pred" / "predict_summary.json").read_text())
    with open(tmp_path / "pred" / "predictions.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4
    recomputed = q2_score([float(r["true"]) for r in rows], [float(r["predicted"]) for r in rows])
    assert summary["q2"] == pytest.approx(recomputed, rel=1e-12)
    assert (tmp_path / "pred" / "q2_vs_r.csv").exists()


def test_entry_point_help(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    assert "offline" in capsys.readouterr().out
