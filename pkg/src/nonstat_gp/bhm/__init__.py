"""Bayesian hierarchical model: data level, GP level with transferred local
parameters, and vague priors; sampled by Metropolis-within-Gibbs."""
from .io import (read_predictions_csv, read_samples_csv, write_predictions_csv,
                 write_samples_csv)
from .model import (McmcState, ModelSpec, ObservationData, beta_gradient, build_observations,
                    data_loglik, design_matrix, design_row, log_posterior)
from .predict import PredictiveSummary, predict
from .sampler import ALL_BLOCKS, PosteriorSamples, Sampler, sample_posterior
from ..errors import ValidationError
from ..window_mle import estimates_at


def run_mcmc(monitors, field, basis, estimates, grid, spec, niter, seed=0):
    """Build observations from monitor records and run one chain."""
    if niter < 100:
        raise ValidationError("niter must be at least 100")
    data = build_observations(monitors, spec, estimates, grid, basis=basis, field=field)
    return sample_posterior(data, spec, niter, seed)


def predict_at(samples, new_coords, new_days, estimates, grid, basis=None, field=None, **kwargs):
    """Predict at new ``(day, location)`` pairs, building design rows and window
    estimates the same way the training records got them."""
    X = design_matrix(samples.spec, basis, field, new_coords, new_days)
    rho_hat, s2_hat = estimates_at(estimates, grid, new_coords)
    return predict(samples, new_coords, new_days, X, rho_hat, s2_hat, **kwargs)


__all__ = [
    "ALL_BLOCKS", "McmcState", "ModelSpec", "ObservationData", "PosteriorSamples", "PredictiveSummary",
    "Sampler", "beta_gradient", "build_observations", "data_loglik", "design_matrix", "design_row",
    "log_posterior", "predict", "predict_at", "read_predictions_csv", "read_samples_csv", "run_mcmc",
    "sample_posterior", "write_predictions_csv", "write_samples_csv",
]
