# %% [markdown]
# # Censored quantile regression
#
# If the conditional median of ability is linear in the covariates, the
# median of income below and above the kink differs only by the shift
# eps (s0 - s1).  The three-step estimator finds observations whose median
# is safely on one side, then fits a quantile regression with a side dummy.
# The dummy coefficient gives the elasticity.

# %%
import warnings

from bunching.budget_model import single_kink
from bunching.cqr import IdentificationWarning, three_step_cqr
from bunching.hetero_dist import Normal
from bunching.simulator import EXP_K, EXP_S0, EXP_S1, LocationScaleDesign, SimConfig, simulate

design = LocationScaleDesign((2.0, 0.6), (Normal(0.0, 1.0),), Normal(0.0, 0.4))
sample = simulate(SimConfig(single_kink(EXP_K, EXP_S0, EXP_S1), 0.5, design, n=50_000, seed=0))
fit = three_step_cqr(sample)
print(f"eps_hat {fit.eps_hat:.4f} (se {fit.std_err:.4f}); truth 0.5")
print("selection sizes:", fit.sizes)

# %% [markdown]
# Without covariates nothing separates the two sides, and the estimator
# refuses to run.

# %%
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    try:
        three_step_cqr(sample.without_covariates())
    except Exception as exc:  # CQRError
        print("error:", exc)
print([str(w.message) for w in caught if issubclass(w.category, IdentificationWarning)])
