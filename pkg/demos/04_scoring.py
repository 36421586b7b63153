# %% [markdown]
# Proper scores for Gaussian predictive distributions.
#
# CRPS and log-loss reward forecasts that are both sharp and calibrated. An
# overconfident forecast with the right mean loses to an honest one.

# %%
import numpy as np

from nonstat_gp.scoring import coverage95, crps_gaussian, log_loss_gaussian, score_table

rng = np.random.default_rng(4)
y = rng.normal(0.0, 1.0, 20_000)
for sd in (0.5, 1.0, 2.0):
    mean = np.zeros_like(y)
    print(f"sd={sd}: mean CRPS {crps_gaussian(mean, sd, y).mean():.4f}, "
          f"mean log-loss {log_loss_gaussian(mean, sd, y).mean():.4f}, "
          f"coverage {coverage95(mean - 1.96 * sd, mean + 1.96 * sd, y):.3f}")

# %% Stratified tables: sums add across strata, RMSE and coverage pool over cases.
strata = np.where(rng.uniform(size=y.size) < 0.3, "near", "far")
table = score_table(np.zeros_like(y), np.ones_like(y), y, strata, label="honest")
score_table(np.zeros_like(y), np.full_like(y, 0.5), y, strata, label="overconfident", table=table)
for label in table.labels():
    for s in table.strata():
        r = table.get(label, s)
        print(f"{label:13} {s:8} n={r.n:6d} crps={r.crps:9.1f} log-loss={r.log_loss:9.1f} rmse={r.rmse:.3f}")
