"""Sup-Wald test of no threshold effect with a multiplier bootstrap.

For each candidate threshold the slopes are re-solved in closed form and the
threshold-part slopes are tested with a Wald statistic. The bootstrap
perturbs the residual moments of the fitted model with one standard normal
draw per unit. Only ``g1_bar`` changes between replicates, so the slope map
and the Wald variance are computed once from the original sample and
shared by every replicate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import sym_inverse, symmetrize
from .estimator import Estimate, GridSpec, profile
from .exceptions import EmptyGrid
from .moments import MomentSystem

__all__ = [
    "WaldCurve",
    "LinearityResult",
    "wald_curve",
    "wald_at",
    "sup_wald",
    "bootstrap_linearity",
    "linearity_test",
    "replicate_seeds",
]

_SIGMA_RTOL = 1e-10


@dataclass(frozen=True)
class WaldCurve:
    """Per-threshold Wald statistics plus what the bootstrap reuses.

    ``delta_map[g]`` maps ``g1_bar`` to the threshold-part slopes at
    ``gammas[g]``; ``sigma_inv[g]`` is the inverse of their asymptotic
    variance from the original sample.
    """

    gammas: np.ndarray
    wald: np.ndarray
    delta: np.ndarray
    delta_map: np.ndarray = field(repr=False)
    sigma_inv: np.ndarray = field(repr=False)
    singular: np.ndarray = field(repr=False)
    n: int = 0


def wald_curve(ms: MomentSystem, grid) -> WaldCurve:
    points = grid.points if isinstance(grid, GridSpec) else np.atleast_1d(
        np.asarray(grid, dtype=float))
    if points.size == 0:
        raise EmptyGrid("threshold grid is empty")
    n, k1 = ms.n, ms.k1
    prof = profile(ms, points, with_map=True)
    b = prof.slopes
    beta, delta = b[:, :k1], b[:, k1:]

    # residuals at every (slopes(gamma), gamma): shape (G, n, P)
    E = ms.dy[None] - np.einsum("npk,gk->gnp", ms.dx, beta)
    if ms.kink:
        qn, qp, g = ms.q_now[None], ms.q_prev[None], points[:, None, None]
        hinge = np.maximum(qn - g, 0.0) - np.maximum(qp - g, 0.0)
        E -= hinge * delta[:, 0, None, None]
    else:
        on_now = ms.q_now[None] > points[:, None, None]
        on_prev = ms.q_prev[None] > points[:, None, None]
        E -= on_now * np.einsum("npk,gk->gnp", ms.xa_now, delta)
        E += on_prev * np.einsum("npk,gk->gnp", ms.xa_prev, delta)
    ghat = np.einsum("nlp,gnp->gnl", ms.Z, E)
    ghat -= ghat.mean(axis=1, keepdims=True)
    omega = np.matmul(ghat.transpose(0, 2, 1), ghat) / n

    jac = -ms.g2_bar(points)
    G = points.size
    k2 = ms.k2
    sigma_inv = np.empty((G, k2, k2))
    singular = np.zeros(G, dtype=bool)
    for j in range(G):
        oinv, s1 = sym_inverse(omega[j], rtol=1e-12, warn=False)
        vtv = symmetrize(jac[j].T @ oinv @ jac[j])
        vinv, s2 = sym_inverse(vtv, rtol=_SIGMA_RTOL, warn=False)
        sigma = vinv[k1:, k1:]
        sigma_inv[j], s3 = sym_inverse(sigma, rtol=_SIGMA_RTOL, warn=False)
        singular[j] = s1 or s2 or s3
    wald = n * np.einsum("gk,gkm,gm->g", delta, sigma_inv, delta)
    return WaldCurve(points, np.maximum(wald, 0.0), delta,
                     np.ascontiguousarray(prof.slope_map[:, k1:, :]), sigma_inv, singular, n)


def wald_at(ms: MomentSystem, gamma: float) -> float:
    """Wald statistic ``n delta(gamma)' Sigma_delta(gamma)^{-1} delta(gamma)``."""
    return float(wald_curve(ms, [gamma]).wald[0])


@dataclass(frozen=True)
class LinearityResult:
    """Outcome of the sup-Wald linearity test.

    ``p_value`` is None when no bootstrap was run.
    """

    sup_wald: float
    gamma_at_sup: float
    gammas: np.ndarray
    wald: np.ndarray
    boot_stats: np.ndarray
    p_value: float | None
    B: int
    seed: int | None
    flags: tuple = ()

    @property
    def wald_curve(self) -> list[tuple[float, float]]:
        return list(zip(self.gammas.tolist(), self.wald.tolist()))

    def critical_value(self, alpha: float = 0.05) -> float:
        return float(np.quantile(self.boot_stats, 1 - alpha))


def _result(curve: WaldCurve, boot=None, p=None, B=0, seed=None) -> LinearityResult:
    j = int(np.argmax(curve.wald))
    flags = ("singular_sigma",) if curve.singular.any() else ()
    boot = np.empty(0) if boot is None else boot
    return LinearityResult(float(curve.wald[j]), float(curve.gammas[j]), curve.gammas,
                           curve.wald, boot, p, B, seed, flags)


def sup_wald(ms: MomentSystem, grid) -> LinearityResult:
    """Supremum of the Wald curve over the grid, without bootstrap."""
    return _result(wald_curve(ms, grid))


def replicate_seeds(seed, B: int) -> list:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(B)


def bootstrap_stats(curve: WaldCurve, ghat: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Sup-Wald statistics for multiplier draws ``eta`` of shape ``(B, n)``.

    ``ghat`` holds the per-unit residual moments ``Z_i e_i`` of the fitted model.
    """
    n = ghat.shape[0]
    g1_star = eta @ ghat / n
    d_star = np.einsum("gkl,bl->bgk", curve.delta_map, g1_star)
    w_star = n * np.einsum("bgk,gkm,bgm->bg", d_star, curve.sigma_inv, d_star)
    return w_star.max(axis=1)


def bootstrap_linearity(ms: MomentSystem, resid, grid, B: int, seed=0,
                        curve: WaldCurve | None = None) -> LinearityResult:
    """Multiplier-bootstrap p-value of the sup-Wald test.

    Each replicate sets ``dy* = e * eta_i`` with ``e`` the differenced
    residuals of the fitted threshold model (``resid``, shape ``(n, P)``)
    and one standard normal ``eta_i`` per unit, re-solves the slopes at every
    grid point and keeps the largest Wald statistic. Replicate ``b`` draws
    from its own child of ``SeedSequence(seed)``, so the result does not
    depend on evaluation order. The p-value counts replicates ``>= supW``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if curve is None:
        curve = wald_curve(ms, grid)
    resid = np.asarray(resid, dtype=float)
    ghat = np.einsum("nlp,np->nl", ms.Z, resid)
    eta = np.stack([np.random.default_rng(s).standard_normal(ms.n)
                    for s in replicate_seeds(seed, B)])
    boot = bootstrap_stats(curve, ghat, eta)
    res = _result(curve)
    p = float(np.mean(boot >= res.sup_wald))
    seed_out = seed if isinstance(seed, (int, np.integer)) else None
    return _result(curve, boot, p, B, seed_out)


def linearity_test(estimate: Estimate, B: int = 0, seed=0, grid=None) -> LinearityResult:
    """Sup-Wald test on the grid and weight matrix of a fitted model."""
    ms = estimate.moment_system
    grid = estimate.grid if grid is None else grid
    curve = wald_curve(ms, grid)
    if B == 0:
        return _result(curve)
    return bootstrap_linearity(ms, estimate.residuals, grid, B, seed, curve=curve)
