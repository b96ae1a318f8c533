"""Asymptotic covariance of the threshold GMM estimator.

The covariance is ``(G' Omega^{-1} G)^{-1} / n`` with ``G`` the Jacobian
of the average residual moment ``g1_bar - g2_bar(gamma) b`` in
``(beta, delta or kappa, gamma)``. The threshold derivative of the jump
model is a Gaussian-kernel (Nadaraya-Watson) estimate; for the kink
model it is a plain sample average of indicators.

The threshold-related Jacobian blocks (``g_gamma_hat_jump``,
``g_kappa_hat``, ``g_gamma_hat_kink``) are returned as the derivative of
``g2_bar(gamma) b``, the negative of the residual-form derivative;
:attr:`JacobianSet.G` flips them so that the off-diagonal covariances
carry the right sign.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._linalg import centered_second_moment, sym_inverse, symmetrize
from .exceptions import DegenerateSample, DimensionMismatch, RankDeficientJacobian
from .moments import MomentSystem

__all__ = [
    "JacobianSet",
    "CovarianceResult",
    "omega_hat",
    "g_beta_hat",
    "g_delta_hat",
    "silverman_bandwidth",
    "g_gamma_hat_jump",
    "g_kappa_hat",
    "g_gamma_hat_kink",
    "jacobian_set",
    "covariance",
    "estimate_covariance",
]

OMEGA_RTOL = 1e-12
RANK_RTOL = 1e-10


def omega_hat(g) -> np.ndarray:
    """Centered second moment ``(1/n) sum g_i g_i' - gbar gbar'``."""
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape[0] < 2:
        raise ValueError("omega_hat needs at least two units")
    return centered_second_moment(g)


def g_beta_hat(ms: MomentSystem) -> np.ndarray:
    """``l x k1`` blocks ``-(1/n) sum_i z_it dx_it'``."""
    return -np.einsum("nlp,npk->lk", ms.Z, ms.dx) / ms.n


def g_delta_hat(ms: MomentSystem, gamma: float) -> np.ndarray:
    """``l x (k1+1)`` blocks ``-(1/n) sum_i z_it 1_it(gamma)' X_it``."""
    on_now = (ms.q_now > gamma)[..., None]
    on_prev = (ms.q_prev > gamma)[..., None]
    thr = ms.xa_now * on_now - ms.xa_prev * on_prev
    return -np.einsum("nlp,npk->lk", ms.Z, thr) / ms.n


def silverman_bandwidth(q, h0: float = 1.5) -> float:
    """``h0 * 1.06 * sd(q) * m^(-1/5)`` for a pooled sample of size ``m``."""
    q = np.asarray(q, dtype=float).ravel()
    if q.size < 2:
        raise ValueError("bandwidth needs at least two observations")
    sd = float(np.std(q, ddof=1))
    if not sd > 0:
        raise DegenerateSample("threshold variable has zero dispersion")
    return h0 * 1.06 * sd * q.size ** (-0.2)


def g_gamma_hat_jump(ms: MomentSystem, delta, gamma: float, h: float) -> np.ndarray:
    """Kernel estimate of the threshold block for the jump model.

    Block ``t`` is ``(1/(n h)) sum_i z_it [(1, x_{i,t-1}') K((gamma - q_{i,t-1})/h)
    - (1, x_it') K((gamma - q_it)/h)] delta`` with ``K`` the standard normal
    density.
    """
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (ms.k1 + 1,):
        raise DimensionMismatch(f"delta must have {ms.k1 + 1} entries")
    k_prev = stats.norm.pdf((gamma - ms.q_prev) / h)
    k_now = stats.norm.pdf((gamma - ms.q_now) / h)
    v = (ms.xa_prev @ delta) * k_prev - (ms.xa_now @ delta) * k_now
    return np.einsum("nlp,np->l", ms.Z, v) / (ms.n * h)


def _hinge_diff(ms: MomentSystem, gamma: float) -> np.ndarray:
    return np.maximum(ms.q_now - gamma, 0.0) - np.maximum(ms.q_prev - gamma, 0.0)


def g_kappa_hat(ms: MomentSystem, gamma: float) -> np.ndarray:
    """Blocks ``(1/n) sum_i z_it [(q_it-g)1{q_it>g} - (q_i,t-1 - g)1{q_i,t-1>g}]``."""
    return np.einsum("nlp,np->l", ms.Z, _hinge_diff(ms, gamma)) / ms.n


def g_gamma_hat_kink(ms: MomentSystem, kappa: float, gamma: float) -> np.ndarray:
    """Blocks ``kappa (1/n) sum_i z_it [1{q_i,t-1 > g} - 1{q_it > g}]``."""
    d = (ms.q_prev > gamma).astype(float) - (ms.q_now > gamma).astype(float)
    return kappa * np.einsum("nlp,np->l", ms.Z, d) / ms.n


@dataclass(frozen=True)
class JacobianSet:
    """Jacobian blocks and moment covariance at an estimate.

    ``G_threshold`` is ``G_delta`` for jump models and ``G_kappa`` for kink
    models. ``bandwidth`` is None for kink models (no smoothing needed).
    """

    G_beta: np.ndarray
    G_threshold: np.ndarray
    G_gamma: np.ndarray
    Omega: np.ndarray
    kink: bool
    bandwidth: float | None = None

    @property
    def G_delta(self) -> np.ndarray:
        if self.kink:
            raise AttributeError("kink model has no G_delta")
        return self.G_threshold

    @property
    def G_kappa(self) -> np.ndarray:
        if not self.kink:
            raise AttributeError("jump model has no G_kappa")
        return self.G_threshold

    @property
    def G(self) -> np.ndarray:
        """Derivative of the average residual moment in ``(beta, delta|kappa, gamma)``."""
        thr = -self.G_threshold if self.kink else self.G_threshold
        return np.column_stack([self.G_beta, thr, -self.G_gamma])


def jacobian_set(ms: MomentSystem, slopes, gamma: float, h0: float = 1.5) -> JacobianSet:
    slopes = np.asarray(slopes, dtype=float)
    k1 = ms.k1
    G_beta = g_beta_hat(ms)
    omega = omega_hat(ms.unit_moments(slopes, gamma))
    if ms.kink:
        return JacobianSet(G_beta, g_kappa_hat(ms, gamma)[:, None],
                           g_gamma_hat_kink(ms, slopes[k1], gamma), omega, True)
    h = silverman_bandwidth(ms.q_pool, h0)
    return JacobianSet(G_beta, g_delta_hat(ms, gamma),
                       g_gamma_hat_jump(ms, slopes[k1:], gamma, h), omega, False, h)


@dataclass(frozen=True)
class CovarianceResult:
    vcov: np.ndarray
    unavailable: np.ndarray
    flags: tuple
    bandwidth: float | None = None


def _covariance(J: JacobianSet, n: int) -> CovarianceResult:
    flags = []
    omega_inv, singular = sym_inverse(J.Omega, rtol=OMEGA_RTOL, what="moment covariance",
                                      warn=False)
    if singular:
        flags.append("singular_omega")
    G = J.G
    M = symmetrize(G.T @ omega_inv @ G)
    d = np.sqrt(np.clip(np.diag(M), 0.0, None))
    dead = d == 0
    scale = np.where(dead, 1.0, d)
    Mc = M / np.outer(scale, scale)
    vals, vecs = np.linalg.eigh(Mc)
    top = vals.max() if vals.size else 0.0
    null = vals <= RANK_RTOL * top
    unavailable = dead.copy()
    if null.any():
        unavailable |= (np.abs(vecs[:, null]) > 1e-6).any(axis=1)
    if unavailable.any():
        flags.append("rank_deficient_jacobian")
        warnings.warn("moment Jacobian is rank deficient; intervals unavailable for "
                      f"{int(unavailable.sum())} coefficient(s)", RankDeficientJacobian,
                      stacklevel=3)
    inv_vals = np.where(null, 0.0, 1.0 / np.where(null, 1.0, vals))
    vcov = symmetrize((vecs * inv_vals) @ vecs.T / np.outer(scale, scale)) / n
    return CovarianceResult(vcov, unavailable, tuple(flags), J.bandwidth)


def covariance(J: JacobianSet, n: int) -> np.ndarray:
    """``(G' Omega^{-1} G)^{-1} / n``, pseudo-inverted when rank deficient."""
    return _covariance(J, n).vcov


def estimate_covariance(ms: MomentSystem, slopes, gamma: float, h0: float = 1.5) -> CovarianceResult:
    J = jacobian_set(ms, slopes, gamma, h0)
    return _covariance(J, ms.n)
