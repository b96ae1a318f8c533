"""First-differenced GMM estimation and testing of dynamic panel threshold models."""

from .avar import covariance, jacobian_set, silverman_bandwidth
from .estimator import Estimate, GridSpec, closed_form_slopes, grid_search, two_step_estimate
from .exceptions import *  # noqa: F401,F403
from .linearity import LinearityResult, bootstrap_linearity, linearity_test, sup_wald, wald_at
from .moments import ModelSpec, build_instruments, build_moment_system, gmm_criterion
from .panel import PanelData, from_frame, load_csv
from .simulate import (
    POWER_DESIGNS,
    SIZE_DESIGN,
    DgpParams,
    generate_dgp,
    run_power_experiment,
    run_size_experiment,
)

__version__ = "0.1.0"
