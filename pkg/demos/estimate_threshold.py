"""
Estimating a dynamic panel threshold model
==========================================

Simulate a panel whose autoregressive slope changes when ``x`` crosses
zero, then recover the jump, the threshold and their standard errors.
"""

import warnings

import numpy as np

from dpthreshold import DgpParams, ModelSpec, generate_dgp, two_step_estimate

warnings.simplefilter("ignore")

# y_t = 0.5 y_{t-1} + 0.8 x_t - 0.5 y_{t-1} 1{x_t > 0} + e_t
params = DgpParams(beta1=0.5, beta2=0.8, delta1=-0.5, n=500, T=12)
panel = generate_dgp(params, seed=1)
print(f"{panel.n} units, {panel.T} periods, series {panel.variables}")

# Lagged y is added automatically; x is both regressor and threshold variable.
spec = ModelSpec(depvar="y", threshold_var="x", regressors=["x"], grid_num=50)
est = two_step_estimate(spec, panel)
print(f"{est.l} moment conditions, bandwidth {est.bandwidth:.3f}")
print(est.summary_frame().round(4))

# Unit-level differenced residuals at the estimate have mean close to zero.
print("mean residual:", np.round(est.residuals.mean(), 5))

# A kink model needs the threshold variable among the regressors.
kink = ModelSpec(depvar="y", threshold_var="x", regressors=["x"], kink=True, grid_num=50)
print(two_step_estimate(kink, panel).summary_frame().round(4))
