# %% [markdown]
# # Mid-censored Tobit and truncation windows
#
# The covariate experiment: elasticity 1, a kink at k = 2.0794, and ability
# normal around a discrete covariate.  The covariate index is calibrated so
# that the pooled ability law is a skewed two-humped mixture.
#
# When the covariate is used, the Tobit model is correctly specified and the
# estimate is stable across windows.  When it is dropped, the full-sample
# fit is off.  Narrowing the window around the kink brings it back.

# %%
import numpy as np

from bunching.simulator import experiment_preset, simulate
from bunching.tobit import heckit_twostep, truncation_path

sample = simulate(experiment_preset("exp1", seed=0))
print(f"n = {sample.n}, share at the kink = {np.mean(sample.y == sample.k):.4f}")

# %%
fractions = [1.0, 0.8, 0.6, 0.4, 0.2]
with_x = truncation_path(sample, fractions)
without_x = truncation_path(sample.without_covariates(), fractions)

print("fraction   eps (with X)   se       eps (no X)   sup-distance (no X)")
for a, b in zip(with_x.rows, without_x.rows):
    print(f"{a['fraction']:8.1f}   {a['eps_hat']:10.4f}   {a['se']:.4f}   {b['eps_hat']:10.4f}   {b['sup_distance']:.4f}")

# %% [markdown]
# The sup-distance column compares the model's implied income distribution
# with the empirical one.  A large value flags a model that does not fit,
# and it shrinks as the window narrows.
#
# Two one-sided censored fits give a second estimate that needs no
# assumption tying the two sides together.

# %%
h = heckit_twostep(sample)
diff, se = h.compare(with_x.fits[0])
print(f"two-step estimate {h.eps_hat:.4f}; difference to the joint fit {diff:+.4f} (se {se:.4f})")
