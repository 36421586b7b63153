"""CSV persistence of posterior draws and predictive summaries.

Draws go to one CSV row per retained iteration; the geometry that prediction
needs (site coordinates, their window estimates, sampled days, model spec)
goes to a JSON sidecar next to it (``<samples>.meta.json``).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .model import ModelSpec
from .predict import PredictiveSummary
from .sampler import COEF_NAMES, PosteriorSamples


def _fmt(v):
    return repr(float(v))


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_samples_csv(path, samples: PosteriorSamples, extra_meta=None):
    R, T, K = samples.beta.shape
    n = samples.w.shape[1]
    header = ["iter", "tau2", "omega2", *COEF_NAMES, "nu"]
    header += [f"beta_{t}_{k}" for t in range(T) for k in range(K)]
    header += [f"w_{j}" for j in range(n)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in range(R):
            row = [samples.burnin + r, _fmt(samples.tau2[r]), _fmt(samples.omega2[r])]
            row += [_fmt(v) for v in samples.coef[r]]
            row.append(_fmt(samples.nu[r]))
            row += [_fmt(v) for v in samples.beta[r].ravel()]
            row += [_fmt(v) for v in samples.w[r]]
            writer.writerow(row)
    meta = {
        "seed": samples.seed,
        "niter": samples.niter,
        "burnin": samples.burnin,
        "acceptance": samples.acceptance,
        "spec": samples.spec.to_dict(),
        "times": [int(t) for t in samples.times],
        "site_coords": samples.site_coords.tolist(),
        "site_rho_hat": samples.site_rho_hat.tolist(),
        "site_s2_hat": samples.site_s2_hat.tolist(),
        "n_covariates": K,
    }
    meta.update(extra_meta or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_samples_csv(path) -> PosteriorSamples:
    meta_file = sidecar_path(path)
    if not meta_file.exists():
        raise ParseError(f"{path}: missing sidecar {meta_file.name}")
    meta = json.loads(meta_file.read_text(encoding="utf-8"))
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = [list(map(float, row)) for row in reader]
    if header is None or header[:2] != ["iter", "tau2"]:
        raise ParseError(f"{path}: not a samples file")
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    T, K = len(meta["times"]), meta["n_covariates"]
    n = len(meta["site_coords"])
    col = {name: i for i, name in enumerate(header)}
    b0 = col["beta_0_0"] if T * K else col["nu"] + 1
    w0 = col["w_0"]
    return PosteriorSamples(
        beta=arr[:, b0:b0 + T * K].reshape(-1, T, K),
        w=arr[:, w0:w0 + n],
        tau2=arr[:, col["tau2"]],
        omega2=arr[:, col["omega2"]],
        coef=arr[:, [col[c] for c in COEF_NAMES]],
        nu=arr[:, col["nu"]],
        acceptance=meta["acceptance"],
        seed=meta["seed"],
        niter=meta["niter"],
        burnin=meta["burnin"],
        spec=ModelSpec.from_dict(meta["spec"]),
        site_coords=np.array(meta["site_coords"], dtype=float).reshape(-1, 2),
        site_rho_hat=np.array(meta["site_rho_hat"], dtype=float),
        site_s2_hat=np.array(meta["site_s2_hat"], dtype=float),
        times=np.array(meta["times"]),
        extra={k: v for k, v in meta.items() if k not in {"acceptance", "spec", "times", "site_coords",
                                                          "site_rho_hat", "site_s2_hat"}},
    )


PREDICTION_COLUMNS = ("day", "lon", "lat", "mean", "sd", "lo95", "hi95")


def write_predictions_csv(path, pred: PredictiveSummary):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for i in range(pred.mean.shape[0]):
            writer.writerow([int(pred.days[i]), _fmt(pred.coords[i, 0]), _fmt(pred.coords[i, 1]),
                             _fmt(pred.mean[i]), _fmt(pred.sd[i]), _fmt(pred.lower95[i]), _fmt(pred.upper95[i])])


def read_predictions_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if not rows or tuple(rows[0].keys()) != PREDICTION_COLUMNS:
        raise ParseError(f"{path}: expected columns {','.join(PREDICTION_COLUMNS)}")
    try:
        days = np.array([int(r["day"]) for r in rows])
        vals = {c: np.array([float(r[c]) for r in rows]) for c in PREDICTION_COLUMNS[1:]}
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    coords = np.column_stack([vals["lon"], vals["lat"]])
    return PredictiveSummary(days, coords, vals["mean"], vals["sd"], vals["lo95"], vals["hi95"],
                             np.full(len(rows), np.nan), np.full(len(rows), np.nan))
