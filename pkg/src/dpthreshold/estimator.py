"""Grid-profiled two-step GMM estimation of jump and kink threshold models."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._linalg import sym_sqrt
from .exceptions import AllGridPointsSingular, DimensionMismatch, EmptyGrid, NearSingularGram
from .moments import (
    ModelSpec,
    MomentSystem,
    build_moment_system,
    weight_second_step,
)
from .panel import PanelData, transform

__all__ = [
    "GridSpec",
    "GridResult",
    "Estimate",
    "closed_form_slopes",
    "profile",
    "grid_search",
    "two_step_estimate",
    "residuals",
    "coefficient_names",
]

GRAM_COND_LIMIT = 1e12
_PINV_RTOL = 1e-10


@dataclass(frozen=True)
class GridSpec:
    """Candidate threshold values, sorted and de-duplicated."""

    points: np.ndarray
    grid_num: int | None = None
    trim_rate: float | None = None

    def __post_init__(self):
        pts = np.unique(np.asarray(self.points, dtype=float).ravel())
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.size

    @classmethod
    def from_sample(cls, q, grid_num: int = 20, trim_rate: float = 0.4) -> "GridSpec":
        """Empirical quantiles of ``q`` at ``trim/2 + j (1 - trim) / (grid_num - 1)``."""
        q = np.asarray(q, dtype=float).ravel()
        if grid_num == 1:
            levels = np.array([0.5])
        else:
            levels = trim_rate / 2 + np.arange(grid_num) * (1 - trim_rate) / (grid_num - 1)
        return cls(np.quantile(q, levels), grid_num, trim_rate)

    @classmethod
    def from_points(cls, points) -> "GridSpec":
        return cls(points)


@dataclass(frozen=True)
class Profile:
    """Profiled criterion over a set of thresholds.

    ``slope_map[g]`` is the ``k x l`` linear map taking the average moment
    ``g1_bar`` to the slopes at ``gammas[g]``; only filled on request.
    """

    gammas: np.ndarray
    slopes: np.ndarray
    criteria: np.ndarray
    gram_cond: np.ndarray
    slope_map: np.ndarray | None = None

    @property
    def near_singular(self) -> np.ndarray:
        return ~(self.gram_cond <= GRAM_COND_LIMIT)


def _weight_sqrt(ms: MomentSystem) -> np.ndarray:
    if "Wh" not in ms._cache:
        ms._cache["Wh"] = sym_sqrt(ms.W)
    return ms._cache["Wh"]


def profile(ms: MomentSystem, gammas, with_map: bool = False, g1_bar=None) -> Profile:
    """Closed-form slopes and criterion at each gamma.

    Minimises ``|W^{1/2}(g1_bar - g2_bar(gamma) b)|^2`` over ``b`` through an
    SVD of ``W^{1/2} g2_bar(gamma)``; singular values below ``1e-10`` of the
    largest are dropped (minimum-norm solution).
    """
    gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
    Wh = _weight_sqrt(ms)
    A = np.matmul(Wh, ms.g2_bar(gammas))
    c = Wh @ (ms.g1_bar if g1_bar is None else np.asarray(g1_bar, dtype=float))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    top = s[:, :1]
    keep = (s > _PINV_RTOL * top) & (top > 0)
    sinv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    pinv = np.matmul(Vt.transpose(0, 2, 1) * sinv[:, None, :], U.transpose(0, 2, 1))
    slopes = pinv @ c
    resid = c - np.einsum("glk,gk->gl", A, slopes)
    crit = np.einsum("gl,gl->g", resid, resid)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = (s[:, 0] / s[:, -1]) ** 2
    cond = np.where(s[:, -1] > 0, cond, np.inf)
    slope_map = np.matmul(pinv, Wh) if with_map else None
    return Profile(gammas, slopes, crit, cond, slope_map)


def closed_form_slopes(ms: MomentSystem, gamma: float) -> tuple[np.ndarray, float]:
    """Slopes minimising the GMM criterion at a fixed threshold.

    Returns ``(slopes, criterion)`` with
    ``slopes = (g2' W g2)^{-1} g2' W g1`` (pseudo-inverse when singular).
    """
    prof = profile(ms, [gamma])
    if prof.near_singular[0]:
        warnings.warn(f"slope Gram matrix near singular at gamma={gamma:g} "
                      f"(cond={prof.gram_cond[0]:.3g})", NearSingularGram, stacklevel=2)
    return prof.slopes[0], float(prof.criteria[0])


@dataclass(frozen=True)
class GridResult:
    gamma: float
    slopes: np.ndarray
    criterion: float
    index: int
    profile: Profile = field(repr=False)


def grid_search(ms: MomentSystem, grid) -> GridResult:
    """Minimise the profiled criterion over the grid.

    Ties go to the smallest threshold.
    """
    points = (grid if isinstance(grid, GridSpec) else GridSpec(grid)).points
    if points.size == 0:
        raise EmptyGrid("threshold grid is empty")
    prof = profile(ms, points)
    crit = np.where(np.isfinite(prof.criteria), prof.criteria, np.inf)
    if not np.isfinite(crit).any():
        raise AllGridPointsSingular("criterion is not finite at any grid point")
    j = int(np.argmin(crit))
    return GridResult(float(points[j]), prof.slopes[j], float(crit[j]), j, prof)


def coefficient_names(x_names, kink: bool) -> list[str]:
    names = [f"{v}_b" for v in x_names]
    if kink:
        names.append("kink_slope")
    else:
        names += ["cons_d"] + [f"{v}_d" for v in x_names]
    return names + ["r"]


@dataclass(frozen=True)
class Estimate:
    """Two-step GMM estimate of a threshold model.

    ``coef`` stacks ``(beta, delta or kappa, gamma)`` in the order of
    ``names``; ``vcov``, ``se`` and ``ci95`` follow the same order.
    ``residuals`` holds the differenced residuals for periods ``t0..T``.
    """

    names: list
    coef: np.ndarray
    vcov: np.ndarray
    ci95: np.ndarray
    criterion_value: float
    weight_stage: str
    residuals: np.ndarray
    k1: int
    kink: bool
    n: int
    T: int
    l: int
    t0: int
    grid: GridSpec
    bandwidth: float | None = None
    flags: tuple = ()
    first_step: GridResult | None = field(default=None, repr=False)
    moment_system: MomentSystem | None = field(default=None, repr=False)

    @property
    def beta(self) -> np.ndarray:
        return self.coef[:self.k1]

    @property
    def delta(self) -> np.ndarray | None:
        return None if self.kink else self.coef[self.k1:-1]

    @property
    def kappa(self) -> float | None:
        return float(self.coef[self.k1]) if self.kink else None

    @property
    def gamma(self) -> float:
        return float(self.coef[-1])

    @property
    def slopes(self) -> np.ndarray:
        return self.coef[:-1]

    @property
    def se(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.sqrt(np.diag(self.vcov))

    @property
    def zstat(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.se

    @property
    def pvalue(self) -> np.ndarray:
        return 2 * stats.norm.sf(np.abs(self.zstat))

    def summary_frame(self):
        import pandas as pd

        return pd.DataFrame({
            "coef": self.coef, "std_err": self.se, "z": self.zstat,
            "p": self.pvalue, "ci_low": self.ci95[:, 0], "ci_high": self.ci95[:, 1],
        }, index=self.names)


def two_step_estimate(spec: ModelSpec, data: PanelData, grid: GridSpec | None = None,
                      compute_vcov: bool = True) -> Estimate:
    """First-differenced two-step GMM estimate with threshold grid search.

    The first step uses the weight chosen by ``spec.first_weight``; the
    second step re-weights with the inverse covariance of the first-step
    residual moments and searches the same grid again.
    """
    from .avar import estimate_covariance

    ms = build_moment_system(spec, data)
    if grid is None:
        grid = GridSpec.from_sample(ms.q_pool, spec.grid_num, spec.trim_rate)
    first = grid_search(ms, grid)
    ms2 = ms.with_weight(weight_second_step(ms.unit_moments(first.slopes, first.gamma)))
    second = grid_search(ms2, grid)

    coef = np.append(second.slopes, second.gamma)
    flags = []
    if second.profile.near_singular[second.index]:
        flags.append("near_singular_gram")
    bandwidth = None
    if compute_vcov:
        cov = estimate_covariance(ms2, second.slopes, second.gamma, spec.h0)
        vcov, unavailable, bandwidth = cov.vcov, cov.unavailable, cov.bandwidth
        flags += list(cov.flags)
    else:
        vcov = np.full((coef.size, coef.size), np.nan)
        unavailable = np.ones(coef.size, dtype=bool)
    with np.errstate(invalid="ignore"):
        half = 1.96 * np.sqrt(np.diag(vcov))
    half = np.where(unavailable, np.nan, half)
    ci = np.column_stack([coef - half, coef + half])
    return Estimate(
        names=coefficient_names(ms.x_names, spec.kink), coef=coef, vcov=vcov, ci95=ci,
        criterion_value=second.criterion, weight_stage="second",
        residuals=ms2.residuals(second.slopes, second.gamma),
        k1=ms.k1, kink=spec.kink, n=ms.n, T=data.T, l=ms.l,
        t0=ms.instruments.t0, grid=grid, bandwidth=bandwidth, flags=tuple(flags),
        first_step=first, moment_system=ms2,
    )


def residuals(spec: ModelSpec, data: PanelData, theta) -> np.ndarray:
    """Differenced residuals ``(n, T - t0 + 1)`` at ``theta = (slopes..., gamma)``."""
    from .moments import _aligned_arrays

    tp = transform(data, spec.depvar, spec.threshold_var, spec.x_vars, dynamic=spec.dynamic)
    t0 = spec.first_period(tp.T)
    arrays = _aligned_arrays(tp, t0)
    n, P = arrays["dy"].shape
    ms = MomentSystem(Z=np.zeros((n, 1, P)), kink=spec.kink, **arrays)
    theta = np.asarray(theta, dtype=float)
    if theta.size != ms.k + 1:
        raise DimensionMismatch(f"theta needs {ms.k + 1} entries, got {theta.size}")
    return ms.residuals(theta[:-1], float(theta[-1]))
