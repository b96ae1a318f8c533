"""Model specification, instruments, moment functions and weight matrices.

The first-differenced threshold model is written in residual form

    g_i(theta) = g1_i - g2_i(gamma) @ b,

where ``b`` stacks the linear slopes and the threshold-part slopes (the
jump vector ``delta`` on ``(1, x')`` or the single kink slope ``kappa``).
Periods ``t0, ..., T`` (1-based) enter the moments; instruments for period
``t`` form one diagonal block of the per-unit instrument matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ._linalg import centered_second_moment, sym_inverse, symmetrize
from .exceptions import (
    CollinearInstruments,
    DimensionMismatch,
    OrderConditionViolated,
    SpecificationError,
)
from .panel import TransformedPanel, transform

logger = logging.getLogger(__name__)

__all__ = [
    "ModelSpec",
    "InstrumentSet",
    "MomentSystem",
    "build_instruments",
    "build_moment_system",
    "build_g1",
    "build_g2",
    "weight_first_step",
    "weight_identity",
    "weight_second_step",
    "gmm_criterion",
]


def _names(v) -> tuple:
    if v is None:
        return ()
    if isinstance(v, str):
        return (v,)
    return tuple(v)


@dataclass(frozen=True)
class ModelSpec:
    """Variable roles and tuning options of a threshold model.

    Parameters
    ----------
    depvar : str
        Dependent variable ``y``.
    threshold_var : str
        Threshold variable ``q``.
    regressors : sequence of str
        Exogenous regressors. They also serve as their own instruments.
    endogenous : sequence of str
        Endogenous regressors; never used as instruments.
    extra_instruments : sequence of str
        Additional excluded instruments.
    kink : bool
        Impose continuity at the threshold (hinge term instead of a jump).
    static : bool
        Drop the automatically included lagged dependent variable.
    t0 : int, optional
        First period (1-based) entering the moments. Defaults to 3 for
        dynamic models and 2 for static ones.
    grid_num, trim_rate : int, float
        Threshold grid size and the total quantile mass trimmed from the tails.
    h0 : float
        Multiplier of the rule-of-thumb kernel bandwidth.
    boot : int
        Bootstrap replications for the linearity test (0 = no test).
    first_weight : {"block", "identity"}
        First-step weight matrix.
    x_order : sequence of str, optional
        Column order of the regressors; a permutation of
        ``regressors + endogenous``. Defaults to exogenous first.
    """

    depvar: str
    threshold_var: str
    regressors: Sequence[str] = ()
    endogenous: Sequence[str] = ()
    extra_instruments: Sequence[str] = ()
    kink: bool = False
    static: bool = False
    t0: int | None = None
    grid_num: int = 20
    trim_rate: float = 0.4
    h0: float = 1.5
    boot: int = 0
    first_weight: str = "block"
    x_order: Sequence[str] = ()

    def __post_init__(self):
        for name in ("regressors", "endogenous", "extra_instruments", "x_order"):
            object.__setattr__(self, name, _names(getattr(self, name)))
        if set(self.endogenous) & set(self.extra_instruments):
            raise SpecificationError("a variable cannot be both endogenous and an instrument")
        if set(self.endogenous) & set(self.regressors):
            raise SpecificationError("a variable cannot be both endogenous and exogenous")
        if self.depvar in self.regressors or self.depvar in self.endogenous:
            raise SpecificationError("the dependent variable cannot be a regressor")
        if self.x_order and sorted(self.x_order) != sorted(self.regressors + self.endogenous):
            raise SpecificationError("x_order must list every regressor exactly once")
        if len(set(self.x_vars)) != len(self.x_vars):
            raise SpecificationError("duplicate regressor names")
        if self.kink and self.threshold_var not in self.x_vars:
            raise SpecificationError(
                "kink model needs the threshold variable among the regressors")
        if self.grid_num < 1:
            raise SpecificationError("grid_num must be positive")
        if not 0.0 < self.trim_rate < 1.0:
            raise SpecificationError("trim_rate must lie in (0, 1)")
        if self.h0 <= 0:
            raise SpecificationError("h0 must be positive")
        if self.boot < 0:
            raise SpecificationError("boot must be nonnegative")
        if self.first_weight not in ("block", "identity"):
            raise SpecificationError("first_weight must be 'block' or 'identity'")

    @property
    def dynamic(self) -> bool:
        return not self.static

    @property
    def x_vars(self) -> tuple:
        """Regressor columns from the data, excluding the lagged depvar."""
        return self.x_order or self.regressors + self.endogenous

    @property
    def k1(self) -> int:
        return len(self.x_vars) + (1 if self.dynamic else 0)

    @property
    def k2(self) -> int:
        return 1 if self.kink else self.k1 + 1

    def first_period(self, T: int) -> int:
        t0 = self.t0 if self.t0 is not None else (3 if self.dynamic else 2)
        low = 3 if self.dynamic else 2
        if not low <= t0 <= T:
            raise SpecificationError(
                f"t0={t0} outside [{low}, T={T}] for a {'dynamic' if self.dynamic else 'static'} model")
        return t0


@dataclass(frozen=True)
class InstrumentSet:
    """Per-period instrument blocks ``z_it`` for periods ``t0..T``.

    ``blocks[p]`` is the ``n x l_t`` matrix for period ``t0 + p``.
    """

    blocks: tuple
    names: tuple = ()
    t0: int = 2

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=float).reshape(len(b), -1) for b in self.blocks)
        if not blocks:
            raise DimensionMismatch("instrument set has no periods")
        n = blocks[0].shape[0]
        if any(b.shape[0] != n for b in blocks):
            raise DimensionMismatch("instrument blocks have different unit counts")
        object.__setattr__(self, "blocks", blocks)
        if not self.names:
            object.__setattr__(self, "names", tuple(
                tuple(f"z{j}" for j in range(b.shape[1])) for b in blocks))

    @property
    def n(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def periods(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> list[int]:
        return [b.shape[1] for b in self.blocks]

    @property
    def l(self) -> int:
        return sum(self.sizes)

    def stacked(self) -> np.ndarray:
        """Dense ``n x l x P`` array; block ``p`` is zero outside period ``p``."""
        Z = np.zeros((self.n, self.l, self.periods))
        start = 0
        for p, b in enumerate(self.blocks):
            Z[:, start:start + b.shape[1], p] = b
            start += b.shape[1]
        return Z


def _rank_ok(block: np.ndarray) -> bool:
    s = np.linalg.svd(block, compute_uv=False)
    return s.size == block.shape[1] and (s.size == 0 or s[-1] > 1e-10 * s[0])


def build_instruments(spec: ModelSpec, data: TransformedPanel) -> InstrumentSet:
    """Default instrument blocks for periods ``t0..T``.

    Per period ``t`` the block holds, in order: dependent-variable lags
    ``y_{t-2}, ..., y_1`` (dynamic models), the levels of the exogenous
    regressors at ``t``, and the extra instruments at ``t``. Extra
    instruments that duplicate an exogenous regressor are dropped.
    """
    panel = data.source
    extra = []
    for name in spec.extra_instruments:
        if name in spec.regressors:
            logger.info("instrument %r already included as exogenous regressor", name)
        elif name not in extra:
            extra.append(name)
    panel.require(extra)
    T = data.T
    t0 = spec.first_period(T)
    blocks, names = [], []
    for t in range(t0, T + 1):
        c = t - 1
        cols, labels = [], []
        if spec.dynamic:
            for j in range(c - 2, -1, -1):
                cols.append(data.y[:, j])
                labels.append(f"L{c - j}.{spec.depvar}@{t}")
        for name in (*spec.regressors, *extra):
            cols.append(panel[name][:, c])
            labels.append(f"{name}@{t}")
        blocks.append(np.column_stack(cols) if cols else np.empty((data.n, 0)))
        names.append(tuple(labels))

    l = sum(b.shape[1] for b in blocks)
    need = spec.k1 + spec.k2 + 1
    if l < need:
        raise OrderConditionViolated(
            f"{l} moment conditions for {need} parameters (slopes plus threshold)")
    for t, b in zip(range(t0, T + 1), blocks):
        if b.shape[1] and not _rank_ok(b):
            raise CollinearInstruments(f"instruments for period {t} are collinear")
    return InstrumentSet(tuple(blocks), tuple(names), t0)


@dataclass(frozen=True)
class MomentSystem:
    """Moment ingredients aligned on the periods ``t0..T``.

    Arrays have the unit on axis 0 and the period on axis 1:
    ``dy`` is ``(n, P)``, ``dx`` is ``(n, P, k1)``, ``xa_now``/``xa_prev``
    hold ``(1, x_t')`` and ``(1, x_{t-1}')``, ``q_now``/``q_prev`` the
    threshold variable at ``t`` and ``t - 1``. ``Z`` is the dense
    ``(n, l, P)`` instrument array and ``W`` the weight matrix.
    """

    Z: np.ndarray
    dy: np.ndarray
    dx: np.ndarray
    xa_now: np.ndarray
    xa_prev: np.ndarray
    q_now: np.ndarray
    q_prev: np.ndarray
    kink: bool = False
    W: np.ndarray | None = None
    x_names: tuple = ()
    instruments: InstrumentSet | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n, l, P = self.Z.shape
        k1 = self.dx.shape[2]
        shapes = {
            "dy": (self.dy.shape, (n, P)),
            "dx": (self.dx.shape, (n, P, k1)),
            "xa_now": (self.xa_now.shape, (n, P, k1 + 1)),
            "xa_prev": (self.xa_prev.shape, (n, P, k1 + 1)),
            "q_now": (self.q_now.shape, (n, P)),
            "q_prev": (self.q_prev.shape, (n, P)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise DimensionMismatch(f"{name} has shape {got}, expected {want}")
        if self.W is None:
            object.__setattr__(self, "W", np.eye(l))
        elif self.W.shape != (l, l):
            raise DimensionMismatch(f"weight matrix must be {l}x{l}")

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def l(self) -> int:
        return self.Z.shape[1]

    @property
    def periods(self) -> int:
        return self.Z.shape[2]

    @property
    def k1(self) -> int:
        return self.dx.shape[2]

    @property
    def k2(self) -> int:
        return 1 if self.kink else self.k1 + 1

    @property
    def k(self) -> int:
        return self.k1 + self.k2

    def with_weight(self, W: np.ndarray) -> "MomentSystem":
        return replace(self, W=symmetrize(np.asarray(W, dtype=float)), _cache={})

    @property
    def Zmat(self) -> np.ndarray:
        """``l x (n*P)`` matrix whose column ``i*P + p`` is unit i's period-p instrument."""
        if "Zmat" not in self._cache:
            self._cache["Zmat"] = np.ascontiguousarray(
                self.Z.transpose(1, 0, 2).reshape(self.l, -1))
        return self._cache["Zmat"]

    @property
    def g1(self) -> np.ndarray:
        if "g1" not in self._cache:
            self._cache["g1"] = build_g1(self.Z, self.dy)
        return self._cache["g1"]

    @property
    def g1_bar(self) -> np.ndarray:
        return self.g1.mean(axis=0)

    @property
    def q_pool(self) -> np.ndarray:
        """Every threshold-variable value that enters an indicator."""
        return np.concatenate([self.q_prev[:, :1].ravel(), self.q_now.ravel()])

    def threshold_design(self, gamma: float) -> np.ndarray:
        """``(n, P, k2)`` threshold columns of the differenced regressors."""
        if self.kink:
            h = (np.maximum(self.q_now - gamma, 0.0)
                 - np.maximum(self.q_prev - gamma, 0.0))
            return h[..., None]
        on_now = (self.q_now > gamma)[..., None]
        on_prev = (self.q_prev > gamma)[..., None]
        return self.xa_now * on_now - self.xa_prev * on_prev

    def design(self, gamma: float) -> np.ndarray:
        """``(n, P, k)`` differenced regressor matrix at ``gamma``."""
        return np.concatenate([self.dx, self.threshold_design(gamma)], axis=2)

    def g2(self, gamma: float) -> np.ndarray:
        return np.einsum("nlp,npk->nlk", self.Z, self.design(gamma))

    def g2_bar(self, gammas) -> np.ndarray:
        """Average ``g2_i(gamma)`` for each gamma; shape ``(G, l, k)``."""
        gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
        n, Zm = self.n, self.Zmat
        if "g2_lin" not in self._cache:
            self._cache["g2_lin"] = Zm @ self.dx.reshape(-1, self.k1) / n
        lin = self._cache["g2_lin"]
        qn = self.q_now.reshape(-1, 1)
        qp = self.q_prev.reshape(-1, 1)
        if self.kink:
            h = np.maximum(qn - gammas, 0.0) - np.maximum(qp - gammas, 0.0)
            thr = (Zm @ h / n)[:, None, :]
        else:
            on_now = (qn > gammas).astype(float)
            on_prev = (qp > gammas).astype(float)
            xn = self.xa_now.reshape(-1, self.k1 + 1)
            xp = self.xa_prev.reshape(-1, self.k1 + 1)
            thr = np.stack([Zm @ (xn[:, [j]] * on_now - xp[:, [j]] * on_prev)
                            for j in range(self.k1 + 1)], axis=1) / n
        out = np.empty((gammas.size, self.l, self.k))
        out[:, :, :self.k1] = lin
        out[:, :, self.k1:] = thr.transpose(2, 0, 1)
        return out

    def residuals(self, slopes, gamma: float) -> np.ndarray:
        """Differenced residuals ``(n, P)`` at ``(slopes, gamma)``."""
        return self.dy - self.design(gamma) @ np.asarray(slopes, dtype=float)

    def unit_moments(self, slopes, gamma: float) -> np.ndarray:
        """Rows ``g_i(theta) = Z_i e_i``; shape ``(n, l)``."""
        return np.einsum("nlp,np->nl", self.Z, self.residuals(slopes, gamma))


def _aligned_arrays(data: TransformedPanel, t0: int) -> dict:
    c0 = t0 - 1
    n, T = data.n, data.T
    ones = np.ones((n, T, 1))
    xa = np.concatenate([ones, data.x], axis=2)
    return dict(
        dy=np.ascontiguousarray(data.dy[:, c0 - 1:]),
        dx=np.ascontiguousarray(data.dx[:, c0 - 1:, :]),
        xa_now=np.ascontiguousarray(xa[:, c0:, :]),
        xa_prev=np.ascontiguousarray(xa[:, c0 - 1:-1, :]),
        q_now=np.ascontiguousarray(data.q[:, c0:]),
        q_prev=np.ascontiguousarray(data.q[:, c0 - 1:-1]),
    )


def build_moment_system(spec: ModelSpec, panel, instruments: InstrumentSet | None = None,
                        W: np.ndarray | None = None) -> MomentSystem:
    """Transform ``panel`` and assemble the moment system.

    ``W`` defaults to the first-step weight selected by ``spec.first_weight``.
    """
    data = panel if isinstance(panel, TransformedPanel) else transform(
        panel, spec.depvar, spec.threshold_var, spec.x_vars, dynamic=spec.dynamic)
    if instruments is None:
        instruments = build_instruments(spec, data)
    arrays = _aligned_arrays(data, instruments.t0)
    if np.isnan(arrays["dx"]).any() or np.isnan(arrays["xa_prev"]).any():
        raise SpecificationError("regressor lags are unavailable at t0; increase t0")
    if W is None:
        W = (weight_first_step(instruments) if spec.first_weight == "block"
             else weight_identity(instruments.l))
    return MomentSystem(Z=instruments.stacked(), kink=spec.kink, W=W,
                        x_names=data.x_names, instruments=instruments, **arrays)


def _as_Z(z) -> np.ndarray:
    if isinstance(z, InstrumentSet):
        return z.stacked()
    Z = np.asarray(z, dtype=float)
    if Z.ndim != 3:
        raise DimensionMismatch("instrument array must be (n, l, P)")
    return Z


def build_g1(z, dy) -> np.ndarray:
    """Rows ``g1_i = (z_{i t0}' dy_{i t0}, ..., z_{iT}' dy_{iT})'``; shape ``(n, l)``."""
    Z = _as_Z(z)
    dy = np.asarray(dy, dtype=float)
    if dy.shape != (Z.shape[0], Z.shape[2]):
        raise DimensionMismatch(f"dy has shape {dy.shape}, expected {(Z.shape[0], Z.shape[2])}")
    return np.einsum("nlp,np->nl", Z, dy)


def build_g2(ms: MomentSystem, gamma: float, kink: bool | None = None) -> np.ndarray:
    """Per-unit ``g2_i(gamma)``; shape ``(n, l, k1 + k2)``."""
    if not np.isfinite(gamma):
        raise ValueError("gamma must be finite")
    if kink is not None and kink != ms.kink:
        ms = replace(ms, kink=kink, _cache={})
    return ms.g2(gamma)


def _tridiagonal_h(P: int) -> np.ndarray:
    return 2.0 * np.eye(P) - np.eye(P, k=1) - np.eye(P, k=-1)


def weight_first_step(z) -> np.ndarray:
    """Inverse of the block-tridiagonal first-step matrix.

    Diagonal blocks are ``(2/n) sum_i z_it z_it'`` and the first
    off-diagonal blocks ``(-1/n) sum_i z_it z_{i,t+1}'``, which is
    ``(1/n) sum_i Z_i H Z_i'`` with ``H = tridiag(-1, 2, -1)``.
    """
    Z = _as_Z(z)
    n, l, P = Z.shape
    H = _tridiagonal_h(P)
    ZH = np.einsum("nlp,pq->lnq", Z, H).reshape(l, -1)
    A = ZH @ Z.transpose(1, 0, 2).reshape(l, -1).T / n
    return sym_inverse(A, what="first-step weight matrix")[0]


def weight_identity(l: int) -> np.ndarray:
    return np.eye(l)


def weight_second_step(ghat) -> np.ndarray:
    """Inverse of the centered second moment of the residual moments ``ghat``."""
    ghat = np.asarray(ghat, dtype=float)
    if ghat.ndim == 1:
        ghat = ghat[:, None]
    return sym_inverse(centered_second_moment(ghat), what="second-step weight matrix")[0]


def gmm_criterion(ms: MomentSystem, theta) -> float:
    """``gbar(theta)' W gbar(theta)`` with ``theta = (slopes..., gamma)``."""
    theta = np.asarray(theta, dtype=float)
    if theta.size != ms.k + 1:
        raise DimensionMismatch(f"theta needs {ms.k + 1} entries, got {theta.size}")
    slopes, gamma = theta[:-1], float(theta[-1])
    gbar = ms.g1_bar - ms.g2_bar(gamma)[0] @ slopes
    return max(float(gbar @ ms.W @ gbar), 0.0)
