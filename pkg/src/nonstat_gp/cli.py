"""``nonstat-gp`` command line: eof, windows, fit, predict, score, simulate, pipeline.

Exit status is 0 on success, 1 for invalid input and 2 for numerical
failure; errors go to stderr as ``ERROR:<code>:<message>``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bhm import (ModelSpec, build_observations, predict_at, read_predictions_csv, read_samples_csv,
                  sample_posterior, write_predictions_csv, write_samples_csv)
from .eof import EofBasis, compute_eofs, detrend_by_eofs
from .errors import (EmptyInput, MissingFlag, NonstatGPError, ParseError, StageFailed, StratumMismatch,
                     UnknownSubcommand, ValidationError)
from .field_store import load_gridded_csv, load_monitor_csv, write_gridded_csv, write_monitor_csv
from .scoring import ScoreTable, combine_tables, score_table
from .sim import SimConfig, run_replicate, sample_design, simulate_reference, simulate_truth
from .window_mle import fit_all_windows, partition, read_windows_csv, write_windows_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("nonstat_gp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "required" in message:
            raise MissingFlag(message)
        if "invalid choice" in message:
            raise UnknownSubcommand(message)
        raise ValidationError(message)


# manifests -----------------------------------------------------------------


def _clean_args(args):
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "log_level", "threads"):
            continue
        if isinstance(v, str) and (os.sep in v or "." in v):
            v = Path(v).name
        out[k] = v
    return out


def write_manifest(out_path, args, extra=None):
    """Deterministic manifest next to an artifact; wall-clock data goes to ``.run.json``."""
    out_path = Path(out_path)
    cfg = _clean_args(args)
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    manifest = {
        "artifact": out_path.name,
        "command": cfg.get("command"),
        "config": cfg,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "seed": cfg.get("seed"),
        "versions": {"nonstat_gp": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
    }
    manifest.update(extra or {})
    out_path.with_name(out_path.name + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    run = {"finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "host": platform.node(),
           "python": platform.python_version()}
    out_path.with_name(out_path.name + ".run.json").write_text(json.dumps(run, indent=2) + "\n", encoding="utf-8")


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise MissingFlag(f"--{name.replace('_', '-')} is required")


def _existing(path):
    if not Path(path).exists():
        raise ValidationError(f"input file not found: {path}")
    return path


def _load_field(path, log_transform=False):
    field = load_gridded_csv(_existing(path))
    if log_transform:
        if np.any(field.values <= 0):
            raise ValidationError("--log-transform needs a strictly positive field")
        field = field.with_values(np.log(field.values))
    return field


# eof -------------------------------------------------------------------------


def summary_path(out):
    out = Path(out)
    return out.with_name(out.stem + "_summary.csv")


def write_basis_csv(path, basis: EofBasis):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lon", "lat", "eof_index", "value"])
        for m in range(basis.num_eofs):
            for (x, y), v in zip(basis.coords, basis.eofs[:, m]):
                writer.writerow([repr(float(x)), repr(float(y)), m + 1, repr(float(v))])
    with summary_path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "singular_value", "variance_explained", "retained"])
        for k, (s, f) in enumerate(zip(basis.singular_values, basis.variance_fractions)):
            writer.writerow([k + 1, repr(float(s)), repr(float(f)), int(k < basis.num_eofs)])


def cmd_eof(args):
    _require(args, "input", "num_eofs", "out")
    field = _load_field(args.input, args.log_transform)
    basis = compute_eofs(field, args.num_eofs)
    write_basis_csv(args.out, basis)
    extra = {"variance_explained_total": float(basis.variance_explained.sum())}
    if args.residuals_out:
        write_gridded_csv(args.residuals_out, detrend_by_eofs(field, basis))
        write_manifest(args.residuals_out, args)
    write_manifest(args.out, args, extra)
    log.info("%d EOFs explain %.3f of the variance", basis.num_eofs, extra["variance_explained_total"])
    return 0


# windows -------------------------------------------------------------------


def cmd_windows(args):
    _require(args, "input", "out")
    field = _load_field(args.input)
    grid = partition(field, args.size)
    estimates = fit_all_windows(field, grid, nu=args.nu, min_cells=args.min_cells, threads=args.threads)
    write_windows_csv(args.out, grid, estimates)
    write_manifest(args.out, args, {"n_windows": grid.n_windows,
                                    "n_fallback": int((estimates.fallback >= 0).sum())})
    return 0


# fit / predict -------------------------------------------------------------


def _fit_spec(args):
    return ModelSpec(num_eofs=args.num_eofs, include_reference_covariate=not args.no_reference_covariate,
                     covariates=args.covariates, nu_fixed=args.nu_fixed, stationary=args.stationary,
                     burnin=args.burnin)


def _context(spec, field_path, windows_path, log_transform, nu):
    grid, estimates = read_windows_csv(_existing(windows_path), nu=nu)
    if spec.covariates == "coordinates":
        return None, None, grid, estimates
    field = _load_field(field_path, log_transform)
    basis = compute_eofs(field, spec.num_eofs) if spec.num_eofs else None
    return field, basis, grid, estimates


def cmd_fit(args):
    _require(args, "obs", "windows", "out")
    if args.covariates == "eof":
        _require(args, "field")
    spec = _fit_spec(args)
    monitors = load_monitor_csv(_existing(args.obs))
    field, basis, grid, estimates = _context(spec, args.field, args.windows, args.log_transform, args.nu_windows)
    data = build_observations(monitors, spec, estimates, grid, basis=basis, field=field)
    if args.iters < 100:
        raise ValidationError("--iters must be at least 100")
    samples = sample_posterior(data, spec, args.iters, seed=args.seed)
    meta = {"field": _relative_to(args.field, args.out), "windows": _relative_to(args.windows, args.out),
            "log_transform": args.log_transform, "nu_windows": args.nu_windows}
    write_samples_csv(args.out, samples, {"inputs": meta})
    write_manifest(args.out, args, {"acceptance": samples.acceptance})
    return 0


def _relative_to(path, artifact):
    """``path`` relative to the directory holding ``artifact`` (None passes through)."""
    if path is None:
        return None
    return os.path.relpath(Path(path).resolve(), Path(artifact).resolve().parent)


def _from_sidecar(path, samples_path):
    if path is None:
        return None
    return str((Path(samples_path).resolve().parent / path).resolve())


def _read_sites(path):
    with Path(_existing(path)).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if line.strip() and not line.startswith("#")))
    if not rows:
        raise EmptyInput(f"{path}: no sites")
    try:
        days = np.array([int(r["day"]) for r in rows])
        coords = np.array([[float(r["lon"]), float(r["lat"])] for r in rows])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    return days, coords


def cmd_predict(args):
    _require(args, "samples", "at", "out")
    samples = read_samples_csv(_existing(args.samples))
    inputs = samples.extra.get("inputs", {})
    field_path = args.field or _from_sidecar(inputs.get("field"), args.samples)
    windows_path = args.windows or _from_sidecar(inputs.get("windows"), args.samples)
    field, basis, grid, estimates = _context(samples.spec, field_path, windows_path,
                                             inputs.get("log_transform", False), inputs.get("nu_windows", 1.5))
    days, coords = _read_sites(args.at)
    pred = predict_at(samples, coords, days, estimates, grid, basis=basis, field=field, thin=args.thin)
    write_predictions_csv(args.out, pred)
    write_manifest(args.out, args)
    return 0


# score -----------------------------------------------------------------------


def _read_strata(path):
    with Path(_existing(path)).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if line.strip() and not line.startswith("#")))
    if not rows or "stratum" not in rows[0]:
        raise ParseError(f"{path}: expected columns lon,lat,stratum (day optional)")
    with_day = "day" in rows[0]
    out = {}
    for r in rows:
        key = (float(r["lon"]), float(r["lat"]))
        out[(int(r["day"]),) + key if with_day else key] = r["stratum"]
    return out, with_day


def score_files(pred_path, truth_path, strata_path=None, label="model", table=None):
    pred = read_predictions_csv(_existing(pred_path))
    truth = load_monitor_csv(_existing(truth_path))
    lookup = {(int(d), float(x), float(y)): v for d, (x, y), v in zip(truth.days, truth.coords, truth.values)}
    keys = [(int(d), float(x), float(y)) for d, (x, y) in zip(pred.days, pred.coords)]
    missing = [k for k in keys if k not in lookup]
    if missing:
        raise StratumMismatch(f"{len(missing)} predictions have no truth value, e.g. {missing[0]}")
    y = np.array([lookup[k] for k in keys])
    strata = None
    if strata_path:
        smap, with_day = _read_strata(strata_path)
        try:
            strata = np.array([smap[k if with_day else k[1:]] for k in keys])
        except KeyError as exc:
            raise StratumMismatch(f"no stratum for {exc.args[0]}") from None
    return score_table(pred.mean, pred.sd, y, strata, pred.lower95, pred.upper95, label=label, table=table)


def cmd_score(args):
    _require(args, "pred", "truth", "out")
    table = score_files(args.pred, args.truth, args.strata, label=args.label)
    table.to_csv(args.out)
    write_manifest(args.out, args)
    return 0


# simulate --------------------------------------------------------------------


def _sim_config(args):
    base = {}
    if args.config:
        with open(_existing(args.config), "rb") as fh:
            base = tomllib.load(fh).get("simulation", {})
    cfg = SimConfig.full_scale(**base) if args.full_scale else SimConfig.from_dict(base) if base else SimConfig()
    overrides = {"n_replicates": args.replicates, "niter": args.iters, "seed": args.seed}
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def write_summary_csv(path, table: ScoreTable):
    """Rows ``metric, model, partial-missing, all-missing, overall``, one per metric and model."""
    strata = ["partial-missing", "all-missing", "overall"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "model", *strata])
        for metric in ("log_loss", "crps", "rmse", "coverage95"):
            for label in table.labels():
                writer.writerow([metric, label, *(repr(getattr(table.get(label, s), metric)) for s in strata)])


def cmd_simulate(args):
    _require(args, "out_dir")
    cfg = _sim_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables, coef_rows, failures = [], [], []
    for r in range(cfg.n_replicates):
        rdir = out / f"replicate_{r:03d}"
        rdir.mkdir(exist_ok=True)
        seed = cfg.seed + r
        try:
            res = run_replicate(cfg, r, keep_predictions=True)
        except NonstatGPError as exc:
            log.error("replicate %d failed: %s", r, exc)
            failures.append((r, str(exc)))
            continue
        write_gridded_csv(rdir / "reference.csv", simulate_reference(cfg, seed))
        truth = simulate_truth(cfg, seed)
        write_gridded_csv(rdir / "truth.csv", truth)
        train, test, strata = sample_design(cfg, seed, truth)
        write_monitor_csv(rdir / "train.csv", train)
        write_monitor_csv(rdir / "test.csv", test)
        for label in ("NS", "S"):
            write_predictions_csv(rdir / f"pred_{label}.csv", res.predictions[label])
        res.table.to_csv(rdir / "scores.csv")
        tables.append(res.table)
        coef_rows.append((r, res.coef_ns, res.coef_s))
    if not tables:
        raise StageFailed("simulate", NonstatGPError("every replicate failed"))
    pooled = combine_tables(tables)
    pooled.to_csv(out / "scores.csv")
    write_summary_csv(out / "summary.csv", pooled)
    with (out / "coefficients.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["replicate", "model", "a1", "b1", "a2", "b2"])
        for r, ns, s in coef_rows:
            for label, c in (("NS", ns), ("S", s)):
                writer.writerow([r, label, *(repr(float(c[k])) for k in ("a1", "b1", "a2", "b2"))])
    write_manifest(out / "summary.csv", args, {"sim_config": cfg.to_dict(), "failures": failures})
    return 0


# pipeline ------------------------------------------------------------------


PIPELINE_STAGES = ("eof", "detrend", "windows", "fit", "predict", "score")


def _ns(**kw):
    return argparse.Namespace(**kw)


def run_pipeline(config_path, resume=False, threads=1):
    with open(_existing(config_path), "rb") as fh:
        cfg = tomllib.load(fh)
    paths = cfg.get("inputs", {})
    opts = cfg.get("options", {})
    for key in ("field", "obs", "test"):
        if key not in paths:
            raise MissingFlag(f"pipeline config lacks inputs.{key}")
    root = Path(config_path).parent
    resolve = lambda p: str((root / p).resolve()) if p else None  # noqa: E731
    field_path, obs_path, test_path = resolve(paths["field"]), resolve(paths["obs"]), resolve(paths["test"])
    strata_path = resolve(paths.get("strata"))
    out = root / opts.get("out_dir", "pipeline_out")
    out.mkdir(parents=True, exist_ok=True)
    seed = int(opts.get("seed", 0))
    num_eofs = int(opts.get("num_eofs", 7))
    covariates = opts.get("covariates", "eof")
    nu = float(opts.get("nu", 1.5))
    nu_fixed = opts.get("nu_fixed")
    log_transform = bool(opts.get("log_transform", False))
    artifacts = {
        "eof": out / "basis.csv", "detrend": out / "residuals.csv", "windows": out / "windows.csv",
        "fit": [out / "samples_NS.csv", out / "samples_S.csv"],
        "predict": [out / "pred_NS.csv", out / "pred_S.csv"], "score": out / "scores.csv",
    }
    common = dict(command="pipeline", config=Path(config_path).name, seed=seed)

    def done(stage):
        paths = artifacts[stage]
        paths = paths if isinstance(paths, list) else [paths]
        return resume and all(p.exists() for p in paths)

    def stage(name, fn):
        if done(name):
            log.info("stage %s: outputs exist, skipped", name)
            return "skipped"
        try:
            fn()
        except NonstatGPError as exc:
            raise StageFailed(name, exc) from exc
        except (OSError, ValueError, np.linalg.LinAlgError) as exc:
            raise StageFailed(name, exc) from exc
        return "ran"

    state = {}

    def field():
        if "field" not in state:
            state["field"] = _load_field(field_path, log_transform)
        return state["field"]

    def basis():
        if "basis" not in state:
            state["basis"] = compute_eofs(field(), num_eofs)
        return state["basis"]

    def do_eof():
        write_basis_csv(artifacts["eof"], basis())
        write_manifest(artifacts["eof"], _ns(**common, stage="eof", num_eofs=num_eofs))

    def do_detrend():
        write_gridded_csv(artifacts["detrend"], detrend_by_eofs(field(), basis()))
        write_manifest(artifacts["detrend"], _ns(**common, stage="detrend", num_eofs=num_eofs))

    def do_windows():
        resid = load_gridded_csv(artifacts["detrend"])
        grid = partition(resid, float(opts.get("window_size", 2.0)))
        est = fit_all_windows(resid, grid, nu=nu, threads=threads)
        write_windows_csv(artifacts["windows"], grid, est)
        write_manifest(artifacts["windows"], _ns(**common, stage="windows", nu=nu))

    def do_fit():
        monitors = load_monitor_csv(obs_path)
        grid, est = read_windows_csv(artifacts["windows"], nu=nu)
        spec = ModelSpec(num_eofs=num_eofs if covariates == "eof" else 0, covariates=covariates,
                         include_reference_covariate=bool(opts.get("reference_covariate", covariates == "eof")),
                         nu_fixed=nu_fixed, burnin=float(opts.get("burnin", 0.15)))
        f = field() if covariates == "eof" else None
        b = basis() if covariates == "eof" and spec.num_eofs else None
        for label, path in zip(("NS", "S"), artifacts["fit"]):
            s = replace(spec, stationary=label == "S")
            data = build_observations(monitors, s, est, grid, basis=b, field=f)
            samples = sample_posterior(data, s, int(opts.get("iters", 2000)), seed=seed)
            inputs = {"field": _relative_to(field_path, path), "windows": _relative_to(artifacts["windows"], path),
                      "log_transform": log_transform, "nu_windows": nu}
            write_samples_csv(path, samples, {"inputs": inputs})
            write_manifest(path, _ns(**common, stage="fit", model=label))

    def do_predict():
        grid, est = read_windows_csv(artifacts["windows"], nu=nu)
        test = load_monitor_csv(test_path)
        for fit_path, pred_path in zip(artifacts["fit"], artifacts["predict"]):
            samples = read_samples_csv(fit_path)
            f = field() if samples.spec.covariates == "eof" else None
            b = basis() if f is not None and samples.spec.num_eofs else None
            pred = predict_at(samples, test.coords, test.days, est, grid, basis=b, field=f)
            write_predictions_csv(pred_path, pred)
            write_manifest(pred_path, _ns(**common, stage="predict"))

    def do_score():
        table = ScoreTable()
        for label, pred_path in zip(("NS", "S"), artifacts["predict"]):
            score_files(pred_path, test_path, strata_path, label=label, table=table)
        table.to_csv(artifacts["score"])
        if strata_path:
            write_summary_csv(out / "summary.csv", table)
        else:
            _write_overall(out / "summary.csv", table)
        write_manifest(artifacts["score"], _ns(**common, stage="score"))

    report = {}
    for name, fn in zip(PIPELINE_STAGES, (do_eof, do_detrend, do_windows, do_fit, do_predict, do_score)):
        report[name] = stage(name, fn)
    return report


def _write_overall(path, table):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "log_loss", "crps", "rmse", "coverage95"])
        for label in table.labels():
            row = table.get(label)
            writer.writerow([label, repr(row.log_loss), repr(row.crps), repr(row.rmse), repr(row.coverage95)])


def cmd_pipeline(args):
    _require(args, "config")
    report = run_pipeline(args.config, resume=args.resume, threads=args.threads)
    for name, status in report.items():
        log.info("%-8s %s", name, status)
    return 0


# parser ------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="nonstat-gp", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("eof", help="EOFs of a gridded field")
    p.add_argument("--input")
    p.add_argument("--num-eofs", type=int)
    p.add_argument("--out")
    p.add_argument("--residuals-out", help="also write the EOF-detrended field here")
    p.add_argument("--log-transform", action="store_true")
    p.set_defaults(func=cmd_eof)

    p = sub.add_parser("windows", help="moving-window Matern MLE")
    p.add_argument("--input")
    p.add_argument("--size", type=float, default=2.0)
    p.add_argument("--nu", type=float, default=1.5)
    p.add_argument("--min-cells", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("fit", help="run the MCMC sampler")
    p.add_argument("--obs")
    p.add_argument("--field")
    p.add_argument("--windows")
    p.add_argument("--num-eofs", type=int, default=7)
    p.add_argument("--covariates", choices=("eof", "coordinates"), default="eof")
    p.add_argument("--no-reference-covariate", action="store_true")
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--burnin", type=float, default=0.15)
    p.add_argument("--nu-fixed", type=float)
    p.add_argument("--nu-windows", type=float, default=1.5, help="smoothness used for the window fits")
    p.add_argument("--stationary", action="store_true", help="clamp b1 = b2 = 0")
    p.add_argument("--log-transform", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior-predictive kriging")
    p.add_argument("--samples")
    p.add_argument("--at")
    p.add_argument("--field")
    p.add_argument("--windows")
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="log-loss, CRPS, RMSE and coverage")
    p.add_argument("--pred")
    p.add_argument("--truth")
    p.add_argument("--strata")
    p.add_argument("--label", default="model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("simulate", help="simulation study, NS versus S")
    p.add_argument("--config")
    p.add_argument("--replicates", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pipeline", help="eof -> detrend -> windows -> fit -> predict -> score")
    p.add_argument("--config")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_pipeline)
    return parser


def _split_global(argv):
    """Allow ``--seed`` and friends after the subcommand as well as before it."""
    globals_, rest = [], []
    it = iter(argv)
    for tok in it:
        name = tok.split("=", 1)[0]
        if name in ("--seed", "--threads", "--log-level"):
            globals_.append(tok)
            if "=" not in tok:
                globals_.append(next(it, ""))
        else:
            rest.append(tok)
    return globals_ + rest


def dispatch(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_split_global(argv))
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.seed is None:
            args.seed = 0
        if not 0 <= args.seed < 2 ** 64:
            raise ValidationError("--seed must be an unsigned 64-bit integer")
        return args.func(args)
    except NonstatGPError as exc:
        print(f"ERROR:{exc.code}:{exc}", file=sys.stderr)
        return 2 if exc.kind == "numerical" else 1


def main():
    sys.exit(dispatch())
