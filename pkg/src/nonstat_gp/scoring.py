"""Proper scores and accuracy metrics for Gaussian predictive summaries.

Log-loss and CRPS are reported as sums over cases, RMSE as a root mean and
coverage as a fraction, so stratum totals add up to the overall row.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import DomainError, EmptyInput, StratumMismatch

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
OVERALL = "overall"


def _check_sd(sd):
    sd = np.asarray(sd, dtype=float)
    if np.any(~(sd > 0)):
        raise DomainError("predictive sd must be positive")
    return sd


def crps_gaussian(mean, sd, y):
    sd = _check_sd(sd)
    z = (np.asarray(y, dtype=float) - mean) / sd
    out = sd * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - _INV_SQRT_PI)
    return float(out) if np.ndim(out) == 0 else out


def expected_abs_error_gaussian(mean, sd, y):
    """``E|X - y|`` for ``X ~ N(mean, sd**2)``; CRPS never exceeds it."""
    sd = _check_sd(sd)
    z = (np.asarray(y, dtype=float) - mean) / sd
    out = sd * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z))
    return float(out) if np.ndim(out) == 0 else out


def log_loss_gaussian(mean, sd, y):
    sd = _check_sd(sd)
    r = np.asarray(y, dtype=float) - mean
    out = 0.5 * np.log(2.0 * math.pi * sd * sd) + r * r / (2.0 * sd * sd)
    return float(out) if np.ndim(out) == 0 else out


def rmse(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.size == 0:
        raise EmptyInput("rmse of no cases")
    if pred.shape != truth.shape:
        raise StratumMismatch("predictions and truths differ in length")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def coverage95(lower, upper, truth):
    truth = np.asarray(truth, dtype=float)
    if truth.size == 0:
        raise EmptyInput("coverage of no cases")
    inside = (np.asarray(lower) <= truth) & (truth <= np.asarray(upper))
    return float(inside.mean())


@dataclass
class ScoreRow:
    log_loss: float
    crps: float
    rmse: float
    coverage95: float
    n: int


@dataclass
class ScoreTable:
    """Metrics by model label, then by stratum (``"overall"`` always present)."""

    rows: dict = field(default_factory=dict)

    def add(self, label, per_stratum):
        self.rows[label] = per_stratum

    def get(self, label, stratum=OVERALL):
        return self.rows[label][stratum]

    def labels(self):
        return list(self.rows)

    def strata(self):
        seen = []
        for per in self.rows.values():
            for s in per:
                if s not in seen:
                    seen.append(s)
        return seen

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["model", "stratum", "n", "log_loss", "crps", "rmse", "coverage95"])
            for label, per in self.rows.items():
                for stratum, row in per.items():
                    writer.writerow([label, stratum, row.n, repr(row.log_loss), repr(row.crps),
                                     repr(row.rmse), repr(row.coverage95)])


def _score(mean, sd, lo, hi, y):
    return ScoreRow(float(np.sum(log_loss_gaussian(mean, sd, y))), float(np.sum(crps_gaussian(mean, sd, y))),
                    rmse(mean, y), coverage95(lo, hi, y), int(y.size))


def score_table(mean, sd, truth, strata=None, lower=None, upper=None, label="model", table=None):
    """Score one model's predictions, per stratum and overall.

    ``lower``/``upper`` default to ``mean -+ 1.96 sd``.
    """
    mean = np.asarray(mean, dtype=float)
    sd = _check_sd(sd)
    truth = np.asarray(truth, dtype=float)
    if not (mean.shape == sd.shape == truth.shape):
        raise StratumMismatch("predictions and truths must align")
    if mean.size == 0:
        raise EmptyInput("no cases to score")
    lower = mean - 1.96 * sd if lower is None else np.asarray(lower, dtype=float)
    upper = mean + 1.96 * sd if upper is None else np.asarray(upper, dtype=float)
    per = {}
    if strata is not None:
        strata = np.asarray(strata)
        if strata.shape != mean.shape:
            raise StratumMismatch("stratum labels must align with predictions")
        for s in sorted(set(strata.tolist())):
            m = strata == s
            per[str(s)] = _score(mean[m], sd[m], lower[m], upper[m], truth[m])
    per[OVERALL] = _score(mean, sd, lower, upper, truth)
    table = table if table is not None else ScoreTable()
    table.add(label, per)
    return table


def combine_tables(tables):
    """Pool replicate tables: sums add, RMSE and coverage pool over cases."""
    out = ScoreTable()
    for label in tables[0].labels():
        per = {}
        for stratum in tables[0].rows[label]:
            rows = [t.get(label, stratum) for t in tables]
            n = sum(r.n for r in rows)
            sse = sum(r.rmse ** 2 * r.n for r in rows)
            per[stratum] = ScoreRow(sum(r.log_loss for r in rows), sum(r.crps for r in rows),
                                    math.sqrt(sse / n), sum(r.coverage95 * r.n for r in rows) / n, n)
        out.add(label, per)
    return out
