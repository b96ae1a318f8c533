"""Monte Carlo size and power experiments for the linearity test.

Data follow

    y_it = b1 y_{i,t-1} + b2 x_it + (d0 + d1 y_{i,t-1} + d2 x_it) 1{x_it > 0} + e_it

with ``x ~ N(0, 1)`` and ``e ~ N(0, 0.25^2)``, the threshold variable being
``x`` itself. Each iteration computes the sup-Wald statistic and a single
bootstrap replicate; the bootstrap critical value is the empirical
``1 - alpha`` quantile of the pooled replicates.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from .estimator import GridSpec, two_step_estimate
from .exceptions import UnstableParams
from .linearity import bootstrap_stats, wald_curve
from .moments import ModelSpec
from .panel import PanelData

__all__ = [
    "DgpParams",
    "ExperimentResult",
    "SIZE_DESIGN",
    "POWER_DESIGNS",
    "generate_dgp",
    "mc_spec",
    "simulate_iteration",
    "run_experiment",
    "run_size_experiment",
    "run_power_experiment",
    "run_coverage_experiment",
    "main",
]


@dataclass(frozen=True)
class DgpParams:
    beta1: float = 0.5
    beta2: float = 0.8
    delta0: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    n: int = 500
    T: int = 12
    sigma_x: float = 1.0
    sigma_eps: float = 0.25
    threshold: float = 0.0
    burn_in: int = 50
    fixed_effects: bool = False

    @property
    def coefficients(self) -> tuple:
        return (self.beta1, self.beta2, self.delta0, self.delta1, self.delta2)


SIZE_DESIGN = DgpParams(0.5, 0.8, 0.0, 0.0, 0.0)
POWER_DESIGNS = (
    DgpParams(0.5, 0.8, 0.0, -0.5, 0.0),
    DgpParams(0.5, 0.0, 0.0, -0.5, 0.0),
    DgpParams(0.5, 0.0, 0.0, -0.9, 0.0),
)


def generate_dgp(p: DgpParams, seed=None) -> PanelData:
    """Simulate a balanced panel with series ``y`` and ``x``.

    Draw order is ``x`` (all periods), then ``e``, then the optional unit
    effects. The recursion starts at zero and the first ``burn_in``
    periods are discarded.
    """
    if not (abs(p.beta1) < 1 and abs(p.beta1 + p.delta1) < 1):
        raise UnstableParams("need |beta1| < 1 and |beta1 + delta1| < 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    total = p.burn_in + p.T
    x = rng.normal(0.0, p.sigma_x, (p.n, total))
    eps = rng.normal(0.0, p.sigma_eps, (p.n, total))
    mu = rng.standard_normal(p.n) if p.fixed_effects else np.zeros(p.n)
    y = np.empty((p.n, total))
    prev = np.zeros(p.n)
    for t in range(total):
        on = x[:, t] > p.threshold
        y[:, t] = (p.beta1 * prev + p.beta2 * x[:, t]
                   + (p.delta0 + p.delta1 * prev + p.delta2 * x[:, t]) * on
                   + mu + eps[:, t])
        prev = y[:, t]
    keep = slice(p.burn_in, total)
    return PanelData(tuple(str(i + 1) for i in range(p.n)),
                     tuple(float(t) for t in range(1, p.T + 1)),
                     {"y": y[:, keep], "x": x[:, keep]})


def mc_spec(grid_num: int = 100, trim_rate: float = 0.4) -> ModelSpec:
    """Dynamic jump model ``y ~ L.y + x`` with threshold variable ``x``."""
    return ModelSpec(depvar="y", threshold_var="x", regressors=("x",),
                     grid_num=grid_num, trim_rate=trim_rate)


def simulate_iteration(p: DgpParams, seed, grid_num: int = 100,
                       trim_rate: float = 0.4) -> tuple[float, float]:
    """One Monte Carlo draw: ``(supW, supW*)`` with one bootstrap replicate."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    data_ss, boot_ss = ss.spawn(2)
    data = generate_dgp(p, np.random.default_rng(data_ss))
    est = two_step_estimate(mc_spec(grid_num, trim_rate), data, compute_vcov=False)
    ms = est.moment_system
    curve = wald_curve(ms, est.grid)
    ghat = np.einsum("nlp,np->nl", ms.Z, est.residuals)
    eta = np.random.default_rng(boot_ss).standard_normal((1, ms.n))
    return float(curve.wald.max()), float(bootstrap_stats(curve, ghat, eta)[0])


def _limited(fn, *args):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        return fn(*args)


def _map(fn, arg_list, n_jobs: int):
    if n_jobs == 1:
        return [_limited(fn, *a) for a in arg_list]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(_limited)(fn, *a) for a in arg_list)


@dataclass(frozen=True)
class ExperimentResult:
    params: DgpParams
    sup_w: np.ndarray
    sup_w_star: np.ndarray
    alpha: float
    seed: int
    grid_num: int
    trim_rate: float

    @property
    def iters(self) -> int:
        return self.sup_w.size

    @property
    def critical_value(self) -> float:
        return float(np.quantile(self.sup_w_star, 1 - self.alpha))

    def rejection_rate(self, alpha: float | None = None) -> float:
        a = self.alpha if alpha is None else alpha
        cv = float(np.quantile(self.sup_w_star, 1 - a))
        return float(np.mean(self.sup_w > cv))

    def summary(self) -> str:
        c = ", ".join(f"{v:g}" for v in self.params.coefficients)
        return (f"coefficients=({c}) n={self.params.n} T={self.params.T} "
                f"iters={self.iters} grid={self.grid_num} alpha={self.alpha:g} "
                f"critical_value={self.critical_value:.6f} "
                f"rejection_rate={self.rejection_rate():.4f}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "supW", "supW_star"])
            for i, (a, b) in enumerate(zip(self.sup_w, self.sup_w_star), start=1):
                w.writerow([i, repr(float(a)), repr(float(b))])


def run_experiment(p: DgpParams, iters: int = 500, seed: int = 0, alpha: float = 0.05,
                   grid_num: int = 100, trim_rate: float = 0.4,
                   n_jobs: int = 1) -> ExperimentResult:
    """Run ``iters`` independent iterations seeded from ``SeedSequence(seed)``."""
    children = np.random.SeedSequence(seed).spawn(iters)
    out = _map(simulate_iteration, [(p, s, grid_num, trim_rate) for s in children], n_jobs)
    arr = np.asarray(out, dtype=float).reshape(-1, 2)
    return ExperimentResult(p, arr[:, 0], arr[:, 1], alpha, seed, grid_num, trim_rate)


def run_size_experiment(iters: int = 500, seed: int = 0, **kw) -> ExperimentResult:
    return run_experiment(SIZE_DESIGN, iters, seed, **kw)


def run_power_experiment(config: DgpParams | tuple, iters: int = 500, seed: int = 0,
                         **kw) -> ExperimentResult:
    """``config`` is a DgpParams or a ``(b1, b2, d0, d1, d2)`` tuple."""
    if not isinstance(config, DgpParams):
        b1, b2, d0, d1, d2 = config
        config = DgpParams(b1, b2, d0, d1, d2)
    return run_experiment(config, iters, seed, **kw)


def _coverage_iteration(p: DgpParams, seed, grid_num, trim_rate, truth):
    data = generate_dgp(p, np.random.default_rng(seed))
    est = two_step_estimate(mc_spec(grid_num, trim_rate), data)
    lo, hi = est.ci95[:, 0], est.ci95[:, 1]
    return [bool(lo[j] <= v <= hi[j]) for j, v in truth.items()] + list(est.coef)


def run_coverage_experiment(p: DgpParams = POWER_DESIGNS[0], iters: int = 500, seed: int = 0,
                            grid_num: int = 100, trim_rate: float = 0.4,
                            n_jobs: int = 1) -> dict:
    """Share of 95% intervals covering the true lag slope and its threshold shift.

    Returns ``{"L.y_b": rate, "L.y_d": rate, "coef": (iters, 6) array}``.
    """
    truth = {0: p.beta1, 3: p.delta1}
    children = np.random.SeedSequence(seed).spawn(iters)
    rows = _map(_coverage_iteration, [(p, s, grid_num, trim_rate, truth) for s in children],
                n_jobs)
    arr = np.asarray(rows, dtype=float)
    return {"L.y_b": float(arr[:, 0].mean()), "L.y_d": float(arr[:, 1].mean()),
            "coef": arr[:, 2:]}


_CONFIG_KEYS = {f.name: f.type for f in fields(DgpParams)}
_RUN_KEYS = {"iters": int, "seed": int, "alpha": float, "grid_num": int,
             "trim_rate": float, "n_jobs": int, "out": str}


def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _CONFIG_KEYS and key not in _RUN_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            cfg[key] = value
    return cfg


def _coerce(key, value):
    if key in _RUN_KEYS:
        return _RUN_KEYS[key](value)
    kind = _CONFIG_KEYS[key]
    if kind in (bool, "bool"):
        return str(value).lower() in ("1", "true", "yes", "on")
    if kind in (int, "int"):
        return int(value)
    return float(value)


def main(argv=None) -> int:
    """Command-line entry point for the Monte Carlo harness."""
    ap = argparse.ArgumentParser(prog="dpthreshold-mc",
                                 description="Size/power experiment for the sup-Wald test.")
    ap.add_argument("--config", help="key = value file; flags override it")
    for name in _CONFIG_KEYS:
        ap.add_argument(f"--{name}", dest=name, default=None)
    for name in _RUN_KEYS:
        ap.add_argument(f"--{name}", dest=name, default=None)
    args = ap.parse_args(argv)

    cfg = read_config(args.config) if args.config else {}
    cfg.update({k: v for k, v in vars(args).items() if k != "config" and v is not None})
    try:
        cfg = {k: _coerce(k, v) for k, v in cfg.items()}
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    params = replace(DgpParams(), **{k: v for k, v in cfg.items() if k in _CONFIG_KEYS})
    run = {k: v for k, v in cfg.items() if k in _RUN_KEYS and k != "out"}
    try:
        res = run_experiment(params, **run)
    except UnstableParams as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if "out" in cfg:
        res.to_csv(cfg["out"])
    print(res.summary())
    return 0


if __name__ == "__main__":
    sys.exit(main())
