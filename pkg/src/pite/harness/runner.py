"""Replication runner behind the CLI subcommands.

Every (setting, replication) pair is an independent task that owns its RNG
streams and output files. Results are gathered after all tasks finish and
sorted, so serial and parallel runs write identical files.
"""
import csv
import hashlib
import io
import itertools
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import sklearn

from .. import model as M
from .. import trainer as T
from ..baselines import KNNMatching, OLS1, OLS2
from ..dataset import (
    SplitSpec,
    SyntheticConfig,
    concat,
    generate_synthetic,
    load_csv,
    save_csv,
    split,
)
from ..estimator import PITE
from ..exceptions import ConfigError, PITEError, UsageError
from ..metrics import EvalReport, evaluate, project_2d, uniformity
from ..numeric import RNG_NAME

logger = logging.getLogger(__name__)

MODEL_SEED_OFFSET = 10000
DISPLAY_NAMES = {"pite": "PITE", "ols1": "OLS-1", "ols2": "OLS-2", "knn": "KNN"}
METRIC_ORDER = EvalReport.csv_header()[:-2] + ["uniformity_init"]


def data_seed(cfg, r):
    return cfg.seed_base + r


def model_seed(cfg, r):
    return cfg.seed_base + MODEL_SEED_OFFSET + r


def dump_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def environment():
    from importlib.metadata import PackageNotFoundError, version

    try:
        pkg = version("artifact")
    except PackageNotFoundError:
        pkg = "unknown"
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "package": pkg,
        "rng": RNG_NAME,
    }


# ---------------------------------------------------------------- datasets


def gamma_label(g):
    return f"gamma={g:g}"


def synthetic_config(cfg, gamma, r):
    d = cfg.dataset
    return SyntheticConfig(
        p=d["p"], n=d["n"], rho=d["rho"], sigma2=d["sigma2"], gamma_disp=gamma,
        beta0=d["beta0"], beta1=d["beta1"], seed=data_seed(cfg, r),
    )


def _csv_files(cfg):
    d = cfg.dataset
    if d["kind"] == "csv":
        files = [cfg.resolve_path(p) for p in d.get("paths", [])]
    else:
        root = cfg.resolve_path(d["path"])
        if not root.is_dir():
            raise ConfigError(f"dataset directory {root} does not exist")
        files = sorted(root.glob(d.get("pattern", "*.csv")))
    if not files:
        raise ConfigError("no dataset files found")
    missing = [str(f) for f in files if not f.is_file()]
    if missing:
        raise ConfigError(f"missing dataset files: {missing}")
    return files


def tasks(cfg):
    """``(setting, replication, source)`` triples; ``source`` is picklable."""
    kind = cfg.dataset["kind"]
    if kind == "synthetic":
        for g in cfg.dataset["gammas"]:
            synthetic_config(cfg, g, 0)
        return [
            (gamma_label(g), r, {"kind": "synthetic", "gamma": float(g)})
            for g in cfg.dataset["gammas"]
            for r in range(cfg.replications)
        ]
    if kind == "manifest":
        mpath = cfg.resolve_path(cfg.dataset["path"])
        try:
            manifest = json.loads(mpath.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {mpath}: {exc}") from exc
        out = []
        for row in manifest["files"]:
            if row["replication"] < cfg.replications:
                path = Path(row["path"])
                if not path.is_absolute():
                    path = mpath.parent / path
                out.append((row["setting"], row["replication"], {"kind": "csv", "path": str(path)}))
        return out
    files = _csv_files(cfg)[: cfg.replications]
    return [(cfg.name, r, {"kind": "csv", "path": str(f)}) for r, f in enumerate(files)]


def load_source(cfg, source, r):
    if source["kind"] == "synthetic":
        return generate_synthetic(synthetic_config(cfg, source["gamma"], r))
    return load_csv(source["path"])


def split_spec(cfg, r):
    s = cfg.split
    return SplitSpec(s["train"], s["valid"], s["test"], seed=data_seed(cfg, r))


# ---------------------------------------------------------------- generate


def generate(cfg, out):
    """Write one CSV per (gamma, replication) plus ``manifest.json``."""
    if cfg.dataset["kind"] != "synthetic":
        raise ConfigError("generate needs a synthetic dataset config")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {out}: {exc}") from exc
    rows = []
    for setting, r, source in tasks(cfg):
        ds = load_source(cfg, source, r)
        fname = f"synthetic_gamma{source['gamma']:g}_rep{r:03d}.csv"
        save_csv(ds, out / fname)
        rows.append({
            "setting": setting,
            "gamma": source["gamma"],
            "replication": r,
            "seed": data_seed(cfg, r),
            "path": fname,
            "n": ds.n,
            "n_treated": ds.group_sizes()[0],
            "sha256": file_sha256(out / fname),
        })
    manifest = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "files": rows}
    dump_json(manifest, out / "manifest.json")
    return manifest


# ---------------------------------------------------------------- train


def _pite_configs(cfg, d, seed, overrides=None):
    params = cfg.pite_params(overrides)
    params["random_state"] = seed
    est = PITE(**params)
    return est.model_config(d), est.train_config()


def train(cfg, out, replication=0):
    """Fit PITE on one replication; write checkpoint, JSON-lines log and metadata."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    matches = [task for task in tasks(cfg) if task[1] == replication]
    if not matches:
        raise ConfigError(f"replication {replication} is not available")
    setting, r, source = matches[0]
    ds = load_source(cfg, source, r)
    tr, va, _ = split(ds, split_spec(cfg, r))
    seed = model_seed(cfg, r)
    mcfg, tcfg = _pite_configs(cfg, ds.d, seed)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log:
        def write(rec):
            log.write(json.dumps(rec, sort_keys=True) + "\n")
            log.flush()
        res = T.fit(tr, va, mcfg, tcfg, callback=write)
    meta = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "setting": setting,
        "replication": r,
        "data_seed": data_seed(cfg, r),
        "model_seed": seed,
        "outcome": ds.outcome,
        "epochs": len(res.history),
        "best_epoch": res.best_epoch,
        "best_valid_loss": res.best_valid_loss,
        "model": mcfg.to_dict(),
        "train": tcfg.to_dict(),
        "environment": environment(),
    }
    M.save_checkpoint(out / "checkpoint.json", res.params, res.protos, {"meta": meta})
    dump_json(meta, out / "run.json")
    return meta


# ---------------------------------------------------------------- benchmark


def _fit_pite(cfg, tr, va, seed, overrides):
    mcfg, tcfg = _pite_configs(cfg, tr.d, seed, overrides)
    res = T.fit(tr, va, mcfg, tcfg)
    return res, mcfg, tcfg


def run_replication(cfg, setting, r, source, estimators=None, overrides=None, dump_dir=None):
    """Fit and evaluate each estimator on one replication; failures stay per cell."""
    estimators = estimators or cfg.estimators
    ds = load_source(cfg, source, r)
    tr, va, te = split(ds, split_spec(cfg, r))
    within = concat(tr, va, name=f"{ds.name}/within")
    rows = []
    for name in estimators:
        row = {
            "estimator": name,
            "setting": setting,
            "replication": r,
            "data_seed": data_seed(cfg, r),
            "model_seed": model_seed(cfg, r) if name == "pite" else None,
            "status": "ok",
            "error": None,
            "metrics": {},
        }
        try:
            phi_out = None
            extra = {}
            if name == "pite":
                res, mcfg, tcfg = _fit_pite(cfg, tr, va, model_seed(cfg, r), overrides)
                tau_w = T.estimate_ite(res.params, within.X, ds.outcome)
                tau_o = T.estimate_ite(res.params, te.X, ds.outcome)
                row["epochs"] = len(res.history)
                row["best_epoch"] = res.best_epoch
                if cfg.dump_representations:
                    phi_out = M.encode(res.params, te.X)
                    phi_init = M.encode(T.initial_params(mcfg, tcfg), te.X)
                    extra["uniformity_init"] = uniformity(phi_init)
                    if dump_dir is not None:
                        _dump_projection(dump_dir, setting, r, phi_out, te.t)
            elif name == "knn":
                est = KNNMatching(**cfg.knn).fit(within.X, within.t, within.y)
                tau_w = est.predict(within.X, within.t, within.y)
                tau_o = est.predict(te.X)
            else:
                est = (OLS1 if name == "ols1" else OLS2)().fit(within.X, within.t, within.y)
                tau_w, tau_o = est.predict(within.X), est.predict(te.X)
            rep = evaluate(within, te, tau_w, tau_o, phi_out=phi_out, metrics=cfg.metrics)
            row["metrics"] = {k: v for k, v in rep.to_dict().items() if v is not None and not k.startswith("n_")}
            row["metrics"].update(extra)
            row["n_within"], row["n_out"] = rep.n_within, rep.n_out
        except (PITEError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            logger.warning("%s failed on %s rep %d: %s", name, setting, r, exc)
            row["status"] = "failed"
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _safe_name(setting):
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in setting)


def _dump_projection(dump_dir, setting, r, phi, t):
    path = Path(dump_dir) / f"{_safe_name(setting)}_rep{r:03d}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    xy = project_2d(phi)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pc1", "pc2", "t"])
        for (a, b), ti in zip(xy, t):
            w.writerow([repr(float(a)), repr(float(b)), int(ti)])


def _task_entry(args):
    cfg, setting, r, source, estimators, overrides, dump_dir = args
    try:
        return run_replication(cfg, setting, r, source, estimators, overrides, dump_dir)
    except PITEError as exc:
        # dataset-level failure: every estimator cell of this replication fails
        err = f"{type(exc).__name__}: {exc}"
        logger.warning("replication %s/%d failed: %s", setting, r, err)
        return [
            {"estimator": e, "setting": setting, "replication": r, "data_seed": data_seed(cfg, r),
             "model_seed": model_seed(cfg, r) if e == "pite" else None,
             "status": "failed", "error": err, "metrics": {}}
            for e in estimators
        ]


def run_all(cfg, estimators=None, overrides=None, dump_dir=None, jobs=1):
    estimators = list(estimators or cfg.estimators)
    work = [(cfg, s, r, src, estimators, overrides, dump_dir) for s, r, src in tasks(cfg)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_task_entry, work))
    else:
        chunks = [_task_entry(w) for w in work]
    order = {e: i for i, e in enumerate(estimators)}
    settings = list(dict.fromkeys(s for _, s, _, _, _, _, _ in work))
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda x: (settings.index(x["setting"]), order[x["estimator"]], x["replication"]))
    return rows


def _std(vals):
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def fmt_cell(mean, std):
    if mean is None:
        return "n/a"
    return f"{mean:.2f}({std:.2f})"


def aggregate(rows):
    """Mean and sample standard deviation per (estimator, setting, metric).

    Every metric that appears in any successful row gets a cell for every
    (estimator, setting) pair; cells without data have ``mean`` set to None.
    """
    estimators = list(dict.fromkeys(r["estimator"] for r in rows))
    settings = list(dict.fromkeys(r["setting"] for r in rows))
    present = {m for r in rows for m in r["metrics"]}
    metrics = [m for m in METRIC_ORDER if m in present]
    cells = []
    for est, setting in itertools.product(estimators, settings):
        group = [r for r in rows if r["estimator"] == est and r["setting"] == setting]
        ok = [r for r in group if r["status"] == "ok"]
        for m in metrics:
            vals = [r["metrics"][m] for r in ok if m in r["metrics"]]
            mean = float(np.mean(vals)) if vals else None
            std = _std(vals) if vals else None
            cells.append({
                "estimator": est,
                "setting": setting,
                "metric": m,
                "mean": mean,
                "std": std,
                "n": len(vals),
                "n_failed": len(group) - len(ok),
                "single_replication": len(vals) == 1,
                "formatted": fmt_cell(mean, std),
            })
    return {"estimators": estimators, "settings": settings, "metrics": metrics, "cells": cells}


def aggregate_csv(agg):
    buf = io.StringIO()
    cols = ["estimator", "setting", "metric", "mean", "std", "n", "n_failed", "single_replication", "formatted"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for c in agg["cells"]:
        w.writerow(["" if c[k] is None else (repr(c[k]) if isinstance(c[k], float) else c[k]) for k in cols])
    return buf.getvalue()


METRIC_BLOCKS = (
    ("sqrt_pehe_within", "sqrt_pehe_out"),
    ("ate_err_within", "ate_err_out"),
    ("r_pol_within", "r_pol"),
    ("att_err_within", "att_err"),
    ("uniformity", "uniformity_init"),
)


def _render_block(agg, metrics):
    lookup = {(c["estimator"], c["setting"], c["metric"]): c for c in agg["cells"]}
    cols = [(s, m) for s in agg["settings"] for m in metrics]
    best = {}
    for col in cols:
        means = [lookup[(e, *col)]["mean"] for e in agg["estimators"]]
        means = [v for v in means if v is not None]
        best[col] = min(means) if means else None
    header = ["method"] + [f"{s} {m}" for s, m in cols]
    body = []
    for e in agg["estimators"]:
        line = [DISPLAY_NAMES.get(e, e)]
        for col in cols:
            c = lookup[(e, *col)]
            txt = c["formatted"]
            if c["mean"] is not None and c["mean"] == best[col] and len(agg["estimators"]) > 1:
                txt += "*"
            if c["single_replication"]:
                txt += "!"
            line.append(txt)
        body.append(line)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in [header] + body]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def render_table(agg):
    """Aligned text tables, one per metric family.

    Rows are estimators and columns are (setting, metric) pairs formatted as
    ``mean(std)``. The lowest mean in each column is marked with ``*`` and
    single-replication cells carry a trailing ``!``.
    """
    blocks = []
    for family in METRIC_BLOCKS:
        metrics = [m for m in family if m in agg["metrics"]]
        if metrics:
            blocks.append(_render_block(agg, metrics))
    return "\n".join(blocks)


def benchmark(cfg, out, jobs=1, estimators=None):
    """Run every replication, then write raw rows, aggregates and tables.

    Returns ``(aggregate, n_failed)``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump = out / "representations" if cfg.dump_representations else None
    rows = run_all(cfg, estimators, dump_dir=dump, jobs=jobs)
    agg = aggregate(rows)
    write_benchmark(cfg, out, rows, agg)
    return agg, sum(r["status"] != "ok" for r in rows)


def write_benchmark(cfg, out, rows, agg):
    out = Path(out)
    dump_json(rows, out / "raw.json")
    dump_json(agg, out / "aggregate.json")
    (out / "aggregate.csv").write_text(aggregate_csv(agg), encoding="utf-8")
    (out / "table.txt").write_text(render_table(agg), encoding="utf-8")
    dump_json(run_metadata(cfg, rows), out / "run.json")


def run_metadata(cfg, rows):
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "environment": environment(),
        "seeds": sorted(
            {(r["setting"], r["replication"], r["data_seed"], r["model_seed"] or -1) for r in rows}
        ),
        "expected_cells": [[r["estimator"], r["setting"], r["replication"]] for r in rows],
    }


# ---------------------------------------------------------------- sweep


def grid_points(grid):
    if not grid:
        raise ConfigError("sweep grid is empty")
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"sweep values for {k!r} must be a non-empty list")
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def point_label(point):
    return ",".join(f"{k}={v:g}" if isinstance(v, (int, float)) else f"{k}={v}" for k, v in point.items())


def sweep(cfg, out, jobs=1, grid=None):
    """PITE over the cross-product of ``grid`` values, every replication each.

    Writes the per-point aggregates and, for each data setting and metric,
    the grid point with the lowest mean. Returns ``(result, n_failed)``.
    """
    grid = grid if grid is not None else cfg.sweep
    points = grid_points(grid)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    raw, results, n_failed = [], [], 0
    for point in points:
        label = point_label(point)
        rows = run_all(cfg, ["pite"], overrides=point, jobs=jobs)
        n_failed += sum(r["status"] != "ok" for r in rows)
        for r in rows:
            r["point"] = label
        raw.extend(rows)
        results.append({"point": point, "label": label, "aggregate": aggregate(rows)})
    argmin = []
    for res0 in results[:1]:
        for setting in res0["aggregate"]["settings"]:
            for m in res0["aggregate"]["metrics"]:
                scored = []
                for res in results:
                    cell = [c for c in res["aggregate"]["cells"]
                            if c["setting"] == setting and c["metric"] == m][0]
                    if cell["mean"] is not None:
                        scored.append((cell["mean"], res["label"]))
                if scored:
                    best = min(scored, key=lambda s: s[0])
                    argmin.append({"setting": setting, "metric": m, "point": best[1], "mean": best[0]})
    result = {"grid": grid, "n_runs": len(raw), "points": results, "argmin": argmin}
    dump_json(raw, out / "sweep_raw.json")
    dump_json(result, out / "sweep.json")
    (out / "sweep.txt").write_text(render_sweep(result), encoding="utf-8")
    dump_json(run_metadata(cfg, raw), out / "sweep_run.json")
    return result, n_failed


def render_sweep(result):
    blocks = []
    for res in result["points"]:
        blocks.append(f"[{res['label']}]\n" + render_table(res["aggregate"]))
    lines = ["argmin per (setting, metric):"]
    for a in result["argmin"]:
        lines.append(f"  {a['setting']} {a['metric']}: {a['point']} ({a['mean']:.4f})")
    return "\n".join(blocks) + "\n" + "\n".join(lines) + "\n"


# ---------------------------------------------------------------- report


class ReportError(UsageError):
    pass


def report(results_dir):
    """Re-render tables from raw JSON and collect representation dumps.

    Writes into ``<results_dir>/report``. Returns the list of absent or
    failed cells (empty when complete). Raises :class:`ReportError` when no
    runs are found.
    """
    root = Path(results_dir)
    raws = sorted(root.glob("raw.json")) + sorted(root.glob("sweep_raw.json"))
    if not root.is_dir() or not raws:
        raise ReportError(f"found 0 runs in {root}: no raw.json or sweep_raw.json")
    dest = root / "report"
    dest.mkdir(exist_ok=True)
    absent = []
    texts, csvs = [], []
    unif_rows = []
    for raw_path in raws:
        rows = json.loads(raw_path.read_text(encoding="utf-8"))
        stem = raw_path.stem
        groups = {}
        for r in rows:
            groups.setdefault(r.get("point"), []).append(r)
        for point, group in groups.items():
            agg = aggregate(group)
            title = stem if point is None else f"{stem} [{point}]"
            texts.append(f"== {title} ==\n" + render_table(agg))
            csvs.append(aggregate_csv(agg) if not csvs else aggregate_csv(agg).split("\n", 1)[1])
        for r in rows:
            if r["status"] != "ok":
                absent.append({"source": stem, "estimator": r["estimator"], "setting": r["setting"],
                               "replication": r["replication"], "point": r.get("point"),
                               "reason": r["error"]})
            if "uniformity" in r["metrics"]:
                unif_rows.append([stem, r.get("point") or "", r["estimator"], r["setting"], r["replication"],
                                  repr(r["metrics"]["uniformity"]),
                                  repr(r["metrics"].get("uniformity_init", float("nan")))])
        run_path = root / ("run.json" if stem == "raw" else "sweep_run.json")
        if run_path.is_file():
            expected = json.loads(run_path.read_text(encoding="utf-8")).get("expected_cells", [])
            seen = {(r["estimator"], r["setting"], r["replication"]) for r in rows}
            for e, s, rep in expected:
                if (e, s, rep) not in seen:
                    absent.append({"source": stem, "estimator": e, "setting": s, "replication": rep,
                                   "point": None, "reason": "missing from raw results"})
    (dest / "tables.txt").write_text("\n".join(texts), encoding="utf-8")
    (dest / "tables.csv").write_text("".join(csvs), encoding="utf-8")
    if unif_rows:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source", "point", "estimator", "setting", "replication", "uniformity", "uniformity_init"])
        w.writerows(unif_rows)
        (dest / "uniformity.csv").write_text(buf.getvalue(), encoding="utf-8")
    _merge_projections(root / "representations", dest / "projections.csv")
    dump_json(absent, dest / "absent_cells.json")
    return absent


def _merge_projections(src, dest):
    files = sorted(Path(src).glob("*.csv")) if Path(src).is_dir() else []
    if not files:
        return
    with open(dest, "w", newline="", encoding="utf-8") as out:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["run", "pc1", "pc2", "t"])
        for f in files:
            with open(f, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                next(reader)
                for row in reader:
                    w.writerow([f.stem] + row)
