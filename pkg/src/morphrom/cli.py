"""Command-line pipelines.

Subcommands: synth, morph, offline, online, learn, predict, report. Each one
reads a JSON config (``--config``) merged over built-in defaults, then
``--set key=value`` overrides (dotted keys reach nested fields, values are
parsed as JSON when possible). Unknown keys are rejected.

Exit codes: 0 ok/converged, 1 hard error, 2 out of distribution,
3 iteration cap reached with a large gradient.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import families, instrument
from .mesh import (airfoil_loop, airfoil_polyline, export_vtk, load_mesh, load_target,
                   mesh_to_json_text, plate_polyline, save_polyline, shape_regularity,
                   synth_airfoil, synth_plate)
from .morph import (AIRFOIL_CONFIG, AIRFOIL_FAMILY_CONFIG, PLATE_CONFIG, MorphConfig,
                    final_correction, run)
from .regress import gpr_train, q2_score, synthetic_scalar_oracle
from .rom import OfflineConfig, load_model, model_to_json, offline_workflow, online_solve

log = logging.getLogger("morphrom")

EXIT_OK, EXIT_ERROR, EXIT_OOD, EXIT_MAXITER = 0, 1, 2, 3
PRESETS = {"plate": PLATE_CONFIG, "airfoil": AIRFOIL_CONFIG, "airfoil_family": AIRFOIL_FAMILY_CONFIG}


class ConfigError(ValueError):
    pass


# -- config handling --------------------------------------------------------

DEFAULTS = {
    "synth": {"family": "plate", "n": 10, "n_test": 0, "seed": 0, "h": 0.05,
              "reference_radius": families.REFERENCE_PLATE_RADIUS, "n_arc": 128,
              "n_boundary": 16, "n_target_boundary": 200},
    "morph": {"preset": "plate", "morph": {}, "correction": False},
    "offline": {"preset": "plate", "morph": {}, "correction": True, "r_mode": "geometric",
                "delta_geo": 5e-4, "delta_pod": 1e-6, "r": None, "q": 5, "gamma_online": None,
                "max_iter_online": 300, "gpr_restarts": 5, "seed": 0, "workers": 1},
    "online": {"split": "test", "delta_geo": None, "delta_grad": None, "max_iter": None,
               "gamma": None},
    "learn": {"restarts": 5, "seed": 0},
    "predict": {"split": "test", "delta_geo": None, "delta_grad": None, "max_iter": None,
                "gamma": None, "q2_vs_r": True},
    "report": {},
}
# nested dicts whose keys are checked against a dataclass instead of DEFAULTS
_FREE_FORM = {"morph"}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge(base, extra, path=""):
    for k, v in extra.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if k in _FREE_FORM and path == "":
            if not isinstance(v, dict):
                raise ConfigError(f"{where!r} must be an object")
            base[k] = _deep_update(base[k], v)
        elif isinstance(base[k], dict) and base[k]:
            if not isinstance(v, dict):
                raise ConfigError(f"{where!r} must be an object")
            _merge(base[k], v, where + ".")
        else:
            base[k] = v
    return base


def _deep_update(a, b):
    out = copy.deepcopy(a)
    for k, v in b.items():
        out[k] = _deep_update(out.get(k, {}), v) if isinstance(v, dict) else v
    return out


def load_config(command, path=None, overrides=()):
    """Defaults for ``command`` updated by a JSON file and ``key=value`` strings."""
    cfg = copy.deepcopy(DEFAULTS[command])
    if path is not None:
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        _merge(cfg, doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        nested = _parse_value(value)
        for p in reversed(parts[1:]):
            nested = {p: nested}
        _merge(cfg, {parts[0]: nested})
    return cfg


def morph_config(cfg):
    """Preset MorphConfig with the partial ``morph`` overrides applied."""
    if cfg["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {cfg['preset']!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[cfg["preset"]].to_dict()
    try:
        return MorphConfig.from_dict(_deep_update(base, cfg["morph"]))
    except TypeError as exc:
        raise ConfigError(f"bad morph config: {exc}") from exc


def offline_config(cfg):
    keys = {k: v for k, v in cfg.items() if k not in ("preset", "morph")}
    return OfflineConfig(morph=morph_config(cfg), **keys)


# -- file helpers -----------------------------------------------------------

def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _g(x):
    return format(float(x), ".17g")


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    doc = json.loads(path.read_text())
    doc["root"] = str(path.parent)
    return doc


def manifest_samples(manifest, split=None):
    out = [s for s in manifest["samples"] if split in (None, "all") or s["split"] == split]
    if not out:
        raise ConfigError(f"manifest has no samples in split {split!r}")
    return out


def _sample_path(manifest, sample):
    return Path(manifest["root"]) / sample["file"]


def test_indices(n, n_test):
    """Interior, evenly spread held-out indices."""
    if not 0 <= n_test < n:
        raise ConfigError("n_test must lie in [0, n)")
    if n_test == 0:
        return set()
    return set(np.round(np.linspace(0, n - 1, n_test + 2)[1:-1]).astype(int).tolist())


# -- benchmark record ---------------------------------------------------------

@dataclass
class BenchmarkRecord:
    offline_times: list
    online_times: list
    offline_iterations: list
    online_iterations: list
    counters: dict = field(default_factory=dict)

    @property
    def ratio_avg(self):
        return float(np.mean(self.offline_times) / np.mean(self.online_times))

    @property
    def ratio_max(self):
        return float(np.max(self.offline_times) / np.max(self.online_times))

    def to_dict(self):
        d = asdict(self)
        d.update(offline_avg=float(np.mean(self.offline_times)),
                 offline_max=float(np.max(self.offline_times)),
                 online_avg=float(np.mean(self.online_times)),
                 online_max=float(np.max(self.online_times)),
                 ratio_avg=self.ratio_avg, ratio_max=self.ratio_max)
        return d


# -- commands -----------------------------------------------------------------

def cmd_synth(cfg, out):
    out = Path(out)
    fam, n = cfg["family"], int(cfg["n"])
    held = test_indices(n, int(cfg["n_test"]))
    samples = []
    if fam == "plate":
        ref = synth_plate(cfg["reference_radius"], cfg["h"])
        for i, R in enumerate(families.plate_radii(n)):
            f = f"targets/sample_{i:03d}.json"
            save_polyline(plate_polyline(float(R), int(cfg["n_arc"])), out / f)
            samples.append({"id": i, "file": f, "params": {"R": float(R)}})
    elif fam == "airfoil":
        ref = synth_airfoil(*families.REFERENCE_AIRFOIL, int(cfg["n_boundary"]))
        shapes = families.airfoil_params(n, int(cfg["seed"]))
        flows = families.flow_params(n, int(cfg["seed"]))
        nt = int(cfg["n_target_boundary"])
        for i, ((m, p, t), mu) in enumerate(zip(shapes, flows)):
            f = f"targets/sample_{i:03d}.json"
            save_polyline(airfoil_polyline(m, p, t, nt), out / f)
            w = synthetic_scalar_oracle(airfoil_loop(m, p, t, nt)[0], mu)
            samples.append({"id": i, "file": f, "params": {"m": float(m), "p": float(p), "t": float(t)},
                            "mu": [float(x) for x in mu], "w": w})
    else:
        raise ConfigError(f"unknown family {fam!r}")
    for s in samples:
        s["split"] = "test" if s["id"] in held else "train"
    _write_text(out / "reference.json", mesh_to_json_text(ref))
    _write_json(out / "manifest.json", {"family": fam, "config": cfg, "reference": "reference.json",
                                        "samples": samples})
    print(f"wrote {len(samples)} {fam} samples to {out}")
    return EXIT_OK


def _history_path(out):
    return Path(out) / "history.csv"


def cmd_morph(cfg, reference, target, out):
    out = Path(out)
    mcfg = morph_config(cfg)
    ref = load_mesh(reference)
    tgt = load_target(target)
    t0 = time.perf_counter()
    with instrument.counting() as counts:
        res = run(ref, tgt, mcfg)
        t_morph = time.perf_counter() - t0
        if cfg["correction"] and res.converged:
            res = final_correction(res, tgt, mcfg)
    _write_text(_history_path(out), res.history_csv())
    _write_json(out / "timing.json", {"morph_seconds": t_morph,
                                      "per_iteration": [float(t) for t in res.timings],
                                      "counters": dict(counts)})
    summary = {"status": res.status, "converged": res.converged, "iterations": res.iterations,
               "delta1": res.delta1, "delta2": res.delta2, "corrected": res.corrected,
               "config": mcfg.to_dict()}
    _write_json(out / "result.json", summary)
    mesh = res.mesh
    _write_text(out / "morphed_mesh.json", mesh_to_json_text(mesh))
    export_vtk(mesh, out / "morphed.vtk", point_data={"displacement": res.displacement},
               cell_data={"shape_regularity": shape_regularity(mesh).per_element})
    print(f"{res.status}: {res.iterations} iterations, delta1={res.delta1:.3g} delta2={res.delta2:.3g}")
    if res.converged:
        return EXIT_OK
    print(json.dumps({"status": res.status, "delta2": res.delta2}), file=sys.stderr)
    return EXIT_MAXITER if res.status == "max_iter" else EXIT_ERROR


def cmd_offline(cfg, manifest_path, out):
    out = Path(out)
    manifest = read_manifest(manifest_path)
    ocfg = offline_config(cfg)
    ref = load_mesh(Path(manifest["root"]) / manifest["reference"])
    train = manifest_samples(manifest, "train")
    targets = [load_target(_sample_path(manifest, s)) for s in train]
    with instrument.counting() as counts:
        model, rep = offline_workflow(ref, targets, ocfg)
    model = replace(model, meta={**model.meta, "train_ids": [s["id"] for s in train]})
    _write_text(out / "model.json", model_to_json(model))
    for s, res in zip(train, rep.results):
        _write_text(out / "histories" / f"sample_{s['id']:03d}.csv", res.history_csv())
    eig = rep.basis.eigenvalues
    _write_text(out / "eigenvalues.csv", _csv_text(["index", "eigenvalue"],
                                                   [[i + 1, _g(e)] for i, e in enumerate(eig)]))
    _write_json(out / "offline_report.json", {
        "r": rep.r, "r_errors": [float(e) for e in rep.r_errors],
        "iterations": rep.iterations, "morph_times": rep.morph_times,
        "ids": [s["id"] for s in train], "gamma_online": model.gamma_online,
        "delta_grad": model.delta_grad, "counters": dict(counts)})
    print(f"trained on {len(train)} samples: r={rep.r}, gamma_online={model.gamma_online:.3g}, "
          f"delta_grad={model.delta_grad:.3g}")
    return EXIT_OK


def _online_kwargs(cfg):
    return {k: cfg[k] for k in ("delta_geo", "delta_grad", "max_iter", "gamma")}


def _targets_for(manifest_or_dir, split):
    p = Path(manifest_or_dir)
    if p.is_dir() and not (p / "manifest.json").exists():
        files = sorted(p.glob("*.json"))
        if not files:
            raise ConfigError(f"no target files in {p}")
        return [{"id": f.stem, "file": str(f)} for f in files], None
    manifest = read_manifest(p)
    samples = manifest_samples(manifest, split)
    return [{**s, "file": str(_sample_path(manifest, s))} for s in samples], manifest


def _batch_exit(statuses):
    if "error" in statuses:
        return EXIT_ERROR
    if "out_of_distribution" in statuses:
        return EXIT_OOD
    if "max_iter_gradient_large" in statuses:
        return EXIT_MAXITER
    return EXIT_OK


def _run_online(model, samples, cfg):
    reports, rows = [], []
    for s in samples:
        try:
            tgt = load_target(s["file"])
            with instrument.counting() as c:
                rep = online_solve(model, tgt, **_online_kwargs(cfg))
            d = rep.to_dict()
            d.update(id=s["id"], counters=dict(c))
            reports.append((s, rep, d))
            rows.append([s["id"], rep.status, rep.iterations, _g(rep.initial_delta2), _g(rep.delta2),
                         _g(rep.grad_norm)])
        except Exception as exc:  # per-sample failures are collected, the batch goes on
            log.error("sample %s failed: %s", s["id"], exc)
            reports.append((s, None, {"id": s["id"], "status": "error", "error": str(exc)}))
            rows.append([s["id"], "error", "", "", "", ""])
    return reports, rows


def cmd_online(cfg, model_path, targets, out, offline_report=None):
    out = Path(out)
    model = load_model(model_path)
    samples, _ = _targets_for(targets, cfg["split"])
    reports, rows = _run_online(model, samples, cfg)
    _write_text(out / "online.csv", _csv_text(
        ["id", "status", "iterations", "initial_delta2", "delta2", "grad_norm"], rows))
    _write_json(out / "online_report.json", [{k: v for k, v in d.items() if k != "counters"}
                                             for _, _, d in reports])
    ok = [(rep, d) for _, rep, d in reports if rep is not None]
    timing = {"online_seconds": [rep.wall_time for rep, _ in ok],
              "factorizations": sum(d["counters"].get("factorizations", 0) for _, d in ok),
              "distance_queries": sum(d["counters"].get("distance_queries", 0) for _, d in ok)}
    _write_json(out / "online_timing.json", timing)
    if offline_report is not None and ok:
        off = json.loads(Path(offline_report).read_text())
        bench = BenchmarkRecord(off["morph_times"], timing["online_seconds"], off["iterations"],
                                [rep.iterations for rep, _ in ok],
                                {"offline": off.get("counters", {}),
                                 "online": {k: timing[k] for k in ("factorizations", "distance_queries")}})
        _write_json(out / "benchmark.json", bench.to_dict())
        print(f"offline/online average time ratio {bench.ratio_avg:.1f}")
    statuses = [d["status"] for _, _, d in reports]
    for s in sorted(set(statuses)):
        print(f"{s}: {statuses.count(s)}")
    return _batch_exit(statuses)


def _scalar_inputs(alpha, mu):
    return np.hstack([np.atleast_2d(alpha), np.atleast_2d(mu)])


def cmd_learn(cfg, model_path, manifest_path, out):
    model = load_model(model_path)
    manifest = read_manifest(manifest_path)
    by_id = {s["id"]: s for s in manifest["samples"]}
    ids = model.meta.get("train_ids")
    if ids is None:
        raise ConfigError("model has no training ids; train it with the offline command")
    rows = [by_id[i] for i in ids]
    if any("w" not in s or "mu" not in s for s in rows):
        raise ConfigError("manifest samples lack scalar outputs (w) or flow parameters (mu)")
    X = _scalar_inputs(model.alpha_train, [s["mu"] for s in rows])
    y = np.array([s["w"] for s in rows])
    gm = gpr_train(X, y, int(cfg["restarts"]), int(cfg["seed"]))
    model = replace(model, scalar_model=gm)
    _write_text(out, model_to_json(model))
    print(f"scalar model trained on {len(y)} samples, log marginal likelihood {gm.log_likelihood[0]:.4g}")
    return EXIT_OK


def cmd_predict(cfg, model_path, manifest_path, out):
    out = Path(out)
    model = load_model(model_path)
    if model.scalar_model is None:
        raise ConfigError("model has no scalar model; run the learn command first")
    samples, manifest = _targets_for(manifest_path, cfg["split"])
    if manifest is None or any("mu" not in s for s in samples):
        raise ConfigError("predict needs a manifest with flow parameters (mu)")
    reports, _ = _run_online(model, samples, cfg)
    good = [(s, rep) for s, rep, _ in reports if rep is not None]
    alphas = np.array([rep.alpha for _, rep in good])
    mus = np.array([s["mu"] for s, _ in good])
    mean, var = model.scalar_model.predict(_scalar_inputs(alphas, mus), return_var=True)
    truth = [s.get("w") for s, _ in good]
    rows = [[s["id"], "" if w is None else _g(w), _g(m), _g(v)]
            for (s, _), w, m, v in zip(good, truth, mean[:, 0], var[:, 0])]
    _write_text(out / "predictions.csv", _csv_text(["id", "true", "predicted", "variance"], rows))
    summary = {"n": len(good), "statuses": [rep.status for _, rep in good]}
    if len(good) >= 2 and all(w is not None for w in truth):
        summary["q2"] = q2_score(truth, mean[:, 0])
        print(f"Q2 = {summary['q2']:.6f} on {len(good)} samples")
        if cfg["q2_vs_r"]:
            summary["q2_vs_r"] = _q2_vs_r(model, manifest, alphas, mus, np.array(truth))
            _write_text(out / "q2_vs_r.csv", _csv_text(
                ["r", "q2"], [[k + 1, _g(q)] for k, q in enumerate(summary["q2_vs_r"])]))
    _write_json(out / "predict_summary.json", summary)
    return EXIT_OK if len(good) == len(samples) else EXIT_ERROR


def _q2_vs_r(model, manifest, alphas, mus, truth):
    """Q2 of scalar models that only see the first k reduced coordinates."""
    by_id = {s["id"]: s for s in manifest["samples"]}
    rows = [by_id[i] for i in model.meta["train_ids"]]
    mu_tr = np.array([s["mu"] for s in rows])
    y = np.array([s["w"] for s in rows])
    out = []
    for k in range(1, model.r + 1):
        gm = gpr_train(_scalar_inputs(model.alpha_train[:, :k], mu_tr), y, 3, 0)
        out.append(q2_score(truth, gm.predict(_scalar_inputs(alphas[:, :k], mus))[:, 0]))
    return out


# -- report -------------------------------------------------------------------

REPORT_INPUTS = ("history.csv", "histories/*.csv", "eigenvalues.csv", "offline_report.json",
                 "q2_vs_r.csv")


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "morphrom"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    return plt, fig, ax


def _save(plt, fig, path):
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    _write_text(path, buf.getvalue())


def cmd_report(cfg, run_dir, out):
    run_dir, out = Path(run_dir), Path(out)
    made = {}
    hist = sorted(run_dir.glob("history.csv")) + sorted(run_dir.glob("histories/*.csv"))
    if hist:
        plt, fig, ax = _figure()
        for p in hist:
            rows = _read_csv(p)
            it = [int(r["iteration"]) for r in rows]
            ax.semilogy(it, [float(r["delta2"]) for r in rows], lw=1, color="C0", alpha=0.6)
            if len(hist) == 1:
                ax.semilogy(it, [float(r["delta1"]) for r in rows], lw=1, color="C1", label="delta1")
        ax.set_xlabel("iteration")
        ax.set_ylabel("delta2")
        if len(hist) == 1:
            ax.legend()
        _save(plt, fig, out / "convergence.svg")
        made["convergence.svg"] = len(hist)
    eig = run_dir / "eigenvalues.csv"
    if eig.exists():
        vals = np.array([float(r["eigenvalue"]) for r in _read_csv(eig)])
        vals = vals[vals > 0]
        plt, fig, ax = _figure()
        ax.semilogy(np.arange(1, len(vals) + 1), vals, "o-", ms=3)
        ax.set_xlabel("mode")
        ax.set_ylabel("eigenvalue")
        _save(plt, fig, out / "eigenvalues.svg")
        made["eigenvalues.svg"] = len(vals)
    off = run_dir / "offline_report.json"
    if off.exists():
        its = np.sort(json.loads(off.read_text())["iterations"])
        plt, fig, ax = _figure()
        ax.step(its, np.arange(1, len(its) + 1), where="post")
        ax.set_xlabel("iterations")
        ax.set_ylabel("converged samples")
        _save(plt, fig, out / "converged_samples.svg")
        made["converged_samples.svg"] = int(len(its))
    q2 = run_dir / "q2_vs_r.csv"
    if q2.exists():
        rows = _read_csv(q2)
        plt, fig, ax = _figure()
        ax.plot([int(r["r"]) for r in rows], [float(r["q2"]) for r in rows], "o-")
        ax.set_xlabel("r")
        ax.set_ylabel("Q2")
        _save(plt, fig, out / "q2_vs_r.svg")
        made["q2_vs_r.svg"] = len(rows)
    if not made:
        raise ConfigError(f"nothing to report in {run_dir}; expected any of: {', '.join(REPORT_INPUTS)}")
    _write_json(out / "summary.json", {"inputs": str(run_dir), "plots": made})
    for name in sorted(made):
        print(out / name)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="morphrom", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (repeatable, dotted keys)")
        return p

    p = add("synth", "write a synthetic plate or airfoil family")
    p.add_argument("--family", choices=["plate", "airfoil"])
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p = add("morph", "morph a reference mesh onto one target")
    p.add_argument("--reference", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--out", required=True)
    p = add("offline", "morph a training family and build the reduced model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p = add("online", "reduced morphing of held-out targets")
    p.add_argument("--model", required=True)
    p.add_argument("--targets", required=True, help="manifest (or its directory) or a directory of target files")
    p.add_argument("--offline-report", help="offline_report.json, enables the benchmark record")
    p.add_argument("--out", required=True)
    p = add("learn", "fit the scalar model on the training family")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p = add("predict", "predict scalars for held-out targets")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p = add("report", "plots and summary from run artifacts")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    return ap


def _flag_overrides(args):
    out = {}
    for key in ("family", "n", "seed", "preset", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def main(argv=None):
    logging.basicConfig(level=os.environ.get("MORPHROM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.set)
        _merge(cfg, _flag_overrides(args))
        if args.command == "synth":
            return cmd_synth(cfg, args.out)
        if args.command == "morph":
            return cmd_morph(cfg, args.reference, args.target, args.out)
        if args.command == "offline":
            return cmd_offline(cfg, args.manifest, args.out)
        if args.command == "online":
            return cmd_online(cfg, args.model, args.targets, args.out, args.offline_report)
        if args.command == "learn":
            return cmd_learn(cfg, args.model, args.manifest, args.out)
        if args.command == "predict":
            return cmd_predict(cfg, args.model, args.manifest, args.out)
        return cmd_report(cfg, args.run, args.out)
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(json.dumps({"status": "error", "error": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
