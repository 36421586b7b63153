"""Nonstationary Matern Gaussian-process fusion of a gridded reference field
with sparse point observations.

Typical flow: :func:`~nonstat_gp.eof.compute_eofs` on the reference field,
:func:`~nonstat_gp.eof.detrend_by_eofs`, moving-window fits with
:func:`~nonstat_gp.window_mle.fit_all_windows`, then the hierarchical model in
:mod:`nonstat_gp.bhm` and scores from :mod:`nonstat_gp.scoring`.
"""
__version__ = "0.1.0"

from .covariance import (KernelConfig, LocalParams, build_cov_matrix, chol_with_jitter, matern_stationary,
                         ns_cov)
from .eof import EofBasis, center_rows, compute_eofs, detrend_by_eofs, eof_at
from .field_store import (Location, MonitorSet, SpaceTimeField, load_gridded_csv, load_monitor_csv,
                          nearest_cell)
from .transfer import TransferCoefficients, is_stationary_collapse, resolve_params
from .window_mle import estimate_at, fit_all_windows, fit_window, partition, window_loglik
