"""Log-linear link from reference-field window estimates to local parameters.

    log rho_i    = a1 + b1 log rho_hat_i
    log sigma2_i = a2 + b2 log sigma2_hat_i

``b1 = b2 = 0`` drops the reference information and leaves a stationary
model with ``rho = exp(a1)`` and ``sigma2 = exp(a2)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import astuple, dataclass

import numpy as np

from .covariance import LocalParams
from .window_mle import WindowEstimates, WindowGrid, estimates_at

log = logging.getLogger(__name__)

LOG_CLAMP = 50.0
STATIONARY_TOL = 1e-8


@dataclass(frozen=True)
class TransferCoefficients:
    a1: float = 0.0
    b1: float = 1.0
    a2: float = 0.0
    b2: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in astuple(self)):
            raise ValueError(f"transfer coefficients must be finite: {self}")

    def as_array(self):
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, arr):
        return cls(*(float(v) for v in arr))


def link(a, b, log_hat):
    """``a + b * log_hat`` and whether it stayed inside the exp(+-50) clamp."""
    eta = a + b * np.asarray(log_hat, dtype=float)
    inside = bool(np.all(np.abs(eta) <= LOG_CLAMP))
    return np.clip(eta, -LOG_CLAMP, LOG_CLAMP), inside


def params_from_hats(coef: TransferCoefficients, rho_hat, sigma2_hat):
    """Map per-location ``(rho_hat, sigma2_hat)`` to :class:`LocalParams`."""
    log_rho, ok1 = link(coef.a1, coef.b1, np.log(rho_hat))
    log_s2, ok2 = link(coef.a2, coef.b2, np.log(sigma2_hat))
    if not (ok1 and ok2):
        log.warning("transfer link clamped at exp(+-%g) for %s", LOG_CLAMP, coef)
    return LocalParams(np.exp(log_rho), np.exp(log_s2))


def resolve_params(coef: TransferCoefficients, estimates: WindowEstimates, grid: WindowGrid, locs) -> LocalParams:
    rho_hat, s2_hat = estimates_at(estimates, grid, locs)
    return params_from_hats(coef, rho_hat, s2_hat)


def is_stationary_collapse(coef: TransferCoefficients, tol=STATIONARY_TOL) -> bool:
    return abs(coef.b1) < tol and abs(coef.b2) < tol
