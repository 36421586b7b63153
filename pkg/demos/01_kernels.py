# %% [markdown]
# Stationary and nonstationary Matern kernels.
#
# Each location carries its own range rho_i and variance sigma2_i. When two
# neighbours disagree, their covariance is damped by the prefactor
# rho_i rho_j / ((rho_i^2 + rho_j^2) / 2), which is at most 1.

# %%
import numpy as np

from nonstat_gp.covariance import (KernelConfig, LocalParams, build_cov_matrix, chol_with_jitter,
                                   matern_stationary, ns_cov)

lags = np.array([0.0, 1.0, 2.5, 5.0, 10.0, 20.0])
for nu in (0.5, 1.5, 2.5):
    print(f"nu={nu}:", np.round(matern_stationary(lags, nu, rho=5.0, sigma2=1.0), 4))

# %% Same site, different ranges: the covariance falls below sqrt(sigma2_i sigma2_j).
for rho_j in (2.0, 4.0, 8.0, 16.0):
    c = ns_cov([0, 0], [0, 0], (4.0, 1.0), (rho_j, 1.0), nu=1.5)
    print(f"rho_i=4, rho_j={rho_j:>4}: C(s, s) = {c:.4f}")

# %% A field whose range grows from west to east.
x = np.linspace(0, 50, 26)
locs = np.column_stack([x, np.zeros_like(x)])
params = LocalParams(rho=1.0 + 0.4 * x, sigma2=np.ones_like(x))
cov = build_cov_matrix(locs, params, KernelConfig(nu=1.5))
print("corr with the neighbour 4 units east, west end:", round(cov[0, 2], 3))
print("corr with the neighbour 4 units east, east end:", round(cov[-3, -1], 3))
print("smallest eigenvalue:", np.linalg.eigvalsh(cov).min())

# %% Jittered Cholesky copes with rank-deficient inputs and refuses indefinite ones.
a = np.random.default_rng(0).normal(size=(20, 3))
chol, jitter = chol_with_jitter(a @ a.T)
print("jitter added to a rank-3 Gram matrix:", jitter)
