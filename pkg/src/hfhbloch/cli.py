"""``bandtool``: command-line driver for band, HFH and effective-medium runs."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import traceback

import numpy as np

from . import config as cfgmod
from . import effmed, hfh
from .bloch import band_structure, fd_refined, write_band_csv
from .lattice import LatticeSpec, ibz_path, vertex

log = logging.getLogger("bandtool")


class TaskError(RuntimeError):
    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


def _round(obj):
    """Round floats to 9 significant digits for stable, readable JSON."""
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round(obj.item())
    return obj


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_round(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _analyse(problem, label, band, cluster_tol, seed, n_bands=None):
    K = cfgmod.vertex_K(problem, label)
    try:
        return hfh.analyse_vertex(problem, K, band - 1, n_bands=n_bands, cluster_tol=cluster_tol, seed=seed)
    except Exception as exc:
        raise TaskError(f"{type(exc).__name__}: {exc}", vertex=label, K=K.tolist(), band=band) from exc


def _path(problem, n):
    dim = problem.n_bloch
    return ibz_path(LatticeSpec(dim), n)


def task_bands(cfg, problem, out):
    opts = cfg["bands"]
    kpath = _path(problem, opts["samples_per_segment"])
    omegas = band_structure(kpath.points, problem, opts["n_bands"], workers=cfg["workers"])
    write_band_csv(os.path.join(out, "bands.csv"), kpath, omegas)
    files = ["bands.csv"]
    ov = opts["overlay"]
    if ov["vertices"]:
        rows = []
        for label in ov["vertices"]:
            t = _analyse(problem, label, ov["band"], ov["cluster_tol"], cfg["seed"])
            K0 = vertex(label, problem.n_bloch).k
            for K in kpath.points:
                kappa = K - K0
                if np.linalg.norm(kappa) <= ov["kappa_max"] + 1e-12:
                    for b, om in zip(t.band_indices, hfh.asymptotic_band(t, kappa)):
                        rows.append((*K, b + 1, om))
        header = [f"K{i + 1}" for i in range(problem.n_bloch)] + ["branch", "omega_asym"]
        with open(os.path.join(out, "overlay.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([*(f"{x:.9g}" for x in r[:-2]), r[-2], f"{r[-1]:.9g}"])
        files.append("overlay.csv")
    return files


def task_hfh(cfg, problem, out):
    opts = cfg["hfh"]
    t = _analyse(problem, opts["vertex"], opts["band"], opts["cluster_tol"], cfg["seed"], opts["n_bands"])
    oracle = None
    if opts["fd_oracle"]:
        pr = problem.centred_at(t.K)
        fd = fd_refined(pr, t.K, t.band_indices, opts["fd_step"], workers=cfg["workers"])
        oracle = hfh.oracle_comparison(t, fd)
    rep = hfh.tensor_report(t, opts["vertex"], oracle)
    if t.classification == hfh.ESSENTIAL:
        rep["pde"] = [effmed.classify_pde(tt).kind for tt in t.T_tilde]
    write_json(os.path.join(out, "hfh_report.json"), rep)
    return ["hfh_report.json"]


def task_dirac(cfg, problem, out):
    opts = cfg["dirac_tune"]
    K = cfgmod.vertex_K(problem, opts["vertex"])
    lo, hi = (b - 1 for b in opts["bands"])
    res = hfh.find_accidental_degeneracy(problem, opts["parameter"], opts["range"], K, (lo, hi),
                                         opts["gap_tol"], opts["n_scan"])
    with open(os.path.join(out, "dirac_sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([opts["parameter"], "gap", "omega_lower"])
        for x, g, om in res.trace:
            w.writerow([f"{x:.9g}", f"{g:.9g}", f"{om:.9g}"])
    rep = {"schema_version": hfh.SCHEMA_VERSION, "parameter": opts["parameter"], "value": res.value,
           "gap": res.gap, "omega0": res.omega0, "success": res.success,
           "gap_tol_relative": opts["gap_tol"]}
    tuned = hfh.with_parameter(problem, opts["parameter"], res.value)
    t = _analyse(tuned, opts["vertex"], lo + 1, opts["cluster_tol"], cfg["seed"], hi + 2)
    rep["classification"] = t.classification
    rep["group_bands"] = [b + 1 for b in t.band_indices]
    if t.classification == hfh.DIRAC:
        rep["slopes"] = {f"{u}": hfh.dirac_dispersion(t, direction=u).slopes.tolist()
                         for u in ([1.0, 0.0], [0.0, 1.0])}
    write_json(os.path.join(out, "dirac_tune.json"), rep)
    return ["dirac_sweep.csv", "dirac_tune.json"]


def task_effective(cfg, problem, out):
    eff = effmed.low_frequency_tensor(problem)
    oracle = effmed.acoustic_oracle(problem, eff) if cfg["effective"]["oracle"] else None
    write_json(os.path.join(out, "effective.json"), effmed.effective_report(problem, eff, oracle))
    return ["effective.json"]


def task_decay(cfg, problem, out):
    opts = cfg["decay"]
    t = _analyse(problem, opts["vertex"], opts["band"], opts["cluster_tol"], cfg["seed"])
    if t.p != 1 and not t.decoupled:
        raise TaskError("decay needs an isolated or decoupled band", vertex=opts["vertex"], band=opts["band"])
    branch = t.T_tilde[0]
    est = effmed.decay_rate(branch, t.omega0, opts["omega"], opts["direction"])
    rep = {"schema_version": effmed.SCHEMA_VERSION, "vertex": opts["vertex"], "band": opts["band"],
           "omega0": est.omega0, "omega": est.omega, "direction": est.direction,
           "T_dd": float(branch[opts["direction"], opts["direction"]]), "alpha": est.alpha,
           "pde": effmed.classify_pde(branch).kind}
    write_json(os.path.join(out, "decay.json"), rep)
    return ["decay.json"]


TASK_FUNCS = {"bands": task_bands, "hfh": task_hfh, "dirac-tune": task_dirac,
              "effective": task_effective, "decay": task_decay}


def run(task, config_path, out=None, workers=None, cutoff=None, seed=None) -> int:
    out_dir = out or "."
    try:
        raw = cfgmod.load(config_path)
        cfg = cfgmod.resolve(raw, task, out=out, workers=workers, cutoff=cutoff, seed=seed)
        out_dir = cfg["output"]["dir"]
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
            fh.write(cfgmod.dumps(cfg))
        problem = cfgmod.build_problem(cfg)
        files = TASK_FUNCS[task](cfg, problem, out_dir)
    except Exception as exc:
        os.makedirs(out_dir, exist_ok=True)
        record = {"schema_version": "1.0", "status": "error", "task": task,
                  "error_type": type(exc).__name__, "message": str(exc),
                  "context": getattr(exc, "context", {})}
        write_json(os.path.join(out_dir, "error.json"), record)
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        log.debug("%s", traceback.format_exc())
        return 2 if isinstance(exc, cfgmod.ConfigError) else 1
    for f in files:
        print(os.path.join(out_dir, f))
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="bandtool", description=__doc__)
    ap.add_argument("task", choices=cfgmod.TASKS)
    ap.add_argument("--config", required=True, help="YAML or JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--workers", type=int, help="threads for K-point and stencil solves")
    ap.add_argument("--cutoff", type=int, help="plane-wave cutoff per axis")
    ap.add_argument("--seed", type=int, help="seed of the decoupling combination")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return run(args.task, args.config, args.out, args.workers, args.cutoff, args.seed)


if __name__ == "__main__":
    sys.exit(main())
