"""Command-line front end: estimate a threshold model from a CSV panel.

Usage::

    dpthreshold --data panel.csv --id unit --time year y q x1 x2 \\
        --endo x3 --inst w1 w2 --grid_num 20 --boot 500 --output res.json

The first variable is the dependent variable, the second the threshold
variable, the rest exogenous regressors. Exit codes: 0 success, 1 usage,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .estimator import Estimate, two_step_estimate
from .exceptions import DataError, NumericalError, SpecificationError
from .linearity import LinearityResult, linearity_test
from .moments import ModelSpec
from .panel import load_csv

__all__ = ["RunConfig", "RunReport", "UsageError", "parse_args", "run", "main"]


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    data: str
    depvar: str
    threshold_var: str
    indepvars: tuple = ()
    endo: tuple = ()
    exo: tuple = ()
    inst: tuple = ()
    kink: bool = False
    static: bool = False
    grid_num: int = 20
    trim_rate: float = 0.4
    h_0: float = 1.5
    boot: int = 0
    seed: int = 0
    id_col: str = "id"
    time_col: str = "time"
    subsample: str | None = None
    output: str | None = None
    wald_csv: str | None = None
    boot_csv: str | None = None
    first_weight: str = "block"

    def to_spec(self) -> ModelSpec:
        return ModelSpec(
            depvar=self.depvar, threshold_var=self.threshold_var,
            regressors=self.indepvars + self.exo, endogenous=self.endo,
            extra_instruments=self.inst, kink=self.kink, static=self.static,
            grid_num=self.grid_num, trim_rate=self.trim_rate, h0=self.h_0,
            boot=self.boot, first_weight=self.first_weight,
            x_order=self.indepvars + self.endo + self.exo,
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dpthreshold",
                 description="First-differenced GMM for dynamic panel threshold models.")
    ap.add_argument("varlist", nargs="+", metavar="VAR",
                    help="depvar, threshold variable, then exogenous regressors")
    ap.add_argument("--data", required=True, help="long-format CSV file")
    ap.add_argument("--id", dest="id_col", default="id", help="panel (unit) column")
    ap.add_argument("--time", dest="time_col", default="time", help="time column")
    ap.add_argument("--endo", "--endogenous", nargs="+", default=[], metavar="VAR",
                    help="endogenous regressors (not listed in the varlist)")
    ap.add_argument("--exo", nargs="+", default=[], metavar="VAR",
                    help="exogenous regressors appended after the endogenous ones")
    ap.add_argument("--inst", nargs="+", default=[], metavar="VAR",
                    help="additional instrumental variables")
    ap.add_argument("--kink", action="store_true", help="impose a kink at the threshold")
    ap.add_argument("--static", action="store_true",
                    help="do not add the lagged dependent variable")
    ap.add_argument("--grid_num", type=int, default=20)
    ap.add_argument("--trim_rate", type=float, default=0.4)
    ap.add_argument("--h_0", type=float, default=1.5, help="bandwidth multiplier")
    ap.add_argument("--boot", "--boost", dest="boot", type=int, default=0,
                    help="bootstrap replications for the linearity test")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--if", dest="subsample", default=None, metavar="EXPR",
                    help="keep units satisfying 'column op constant'")
    ap.add_argument("--output", default=None, help="write stored results as JSON")
    ap.add_argument("--wald-csv", dest="wald_csv", default=None,
                    help="write the Wald curve (gamma, wald)")
    ap.add_argument("--boot-csv", dest="boot_csv", default=None,
                    help="write bootstrap statistics (replicate, supW_star)")
    ap.add_argument("--first-weight", dest="first_weight", choices=("block", "identity"),
                    default="block")
    return ap


def parse_args(argv) -> RunConfig:
    """Parse and validate command-line arguments."""
    ns = _parser().parse_args(list(argv))
    if len(ns.varlist) < 2:
        raise UsageError("need at least a dependent variable and a threshold variable")
    depvar, qvar, *indep = ns.varlist
    endo, exo = tuple(ns.endo), tuple(ns.exo)
    if set(endo) & set(exo):
        raise UsageError("variables cannot be both endogenous and exogenous: "
                         + " ".join(sorted(set(endo) & set(exo))))
    if set(endo) & set(indep):
        raise UsageError("endogenous variables must be excluded from the list of "
                         "independent variables; set them with --endo only")
    if set(indep) & set(exo):
        raise UsageError("variables listed with --exo must not repeat in the varlist")
    if ns.boot < 0:
        raise UsageError("--boot must be nonnegative")
    if ns.grid_num < 1:
        raise UsageError("--grid_num must be positive")
    if not 0 < ns.trim_rate < 1:
        raise UsageError("--trim_rate must be in (0, 1)")
    if ns.h_0 <= 0:
        raise UsageError("--h_0 must be positive")
    if ns.kink and qvar not in (*indep, *endo, *exo):
        raise UsageError(f"kink model needs the threshold variable {qvar!r} among the "
                         "regressors (list it again, or with --endo/--exo)")
    return RunConfig(
        data=ns.data, depvar=depvar, threshold_var=qvar, indepvars=tuple(indep),
        endo=endo, exo=exo, inst=tuple(ns.inst), kink=ns.kink, static=ns.static,
        grid_num=ns.grid_num, trim_rate=ns.trim_rate, h_0=ns.h_0, boot=ns.boot,
        seed=ns.seed, id_col=ns.id_col, time_col=ns.time_col, subsample=ns.subsample,
        output=ns.output, wald_csv=ns.wald_csv, boot_csv=ns.boot_csv,
        first_weight=ns.first_weight,
    )


@dataclass
class RunReport:
    n: int
    T: int
    panel_var: str
    time_var: str
    moment_conditions: int
    depvar: str
    rows: list
    boot_p: float
    estimate: Estimate = field(repr=False)
    linearity: LinearityResult | None = field(default=None, repr=False)
    config: RunConfig | None = field(default=None, repr=False)

    def header(self) -> str:
        return (f"N = {self.n}, T = {self.T}\n"
                f"Panel Var. = {self.panel_var}\n"
                f"Time Var. = {self.time_var}\n"
                f"Number of moment conditions = {self.moment_conditions}")

    def table(self) -> str:
        width = max(12, max(len(r["name"]) for r in self.rows) + 1, len(self.depvar) + 1)
        cols = ("Coef.", "Std. Err.", "z", "P>|z|", "[95% Conf.", "Interval]")
        line = "-" * (width + 1) + "+" + "-" * 66
        out = [line, f"{self.depvar:>{width}} |" + "".join(f"{c:>11}" for c in cols), line]
        for r in self.rows:
            vals = (_fmt(r["coef"]), _fmt(r["se"]), _fmt(r["z"], ".2f"), _fmt(r["p"], ".3f"),
                    _fmt(r["ci_low"]), _fmt(r["ci_high"]))
            out.append(f"{r['name']:>{width}} |" + "".join(f"{v:>11}" for v in vals))
        out.append(line)
        return "\n".join(out)

    def text(self) -> str:
        parts = [self.header(), "", self.table()]
        if self.linearity is not None and self.linearity.B > 0:
            parts.append(f"Bootstrap p-value for linearity test = {self.boot_p:.4f} "
                         f"(supW = {self.linearity.sup_wald:.4f}, B = {self.linearity.B})")
        return "\n".join(parts)

    def stored_results(self) -> dict:
        """Structured counterpart of the command's stored results."""
        est, cfg = self.estimate, self.config
        names = est.names
        return {
            "N": self.n,
            "T": self.T,
            "boots_p": self.boot_p,
            "grid": len(est.grid),
            "trim": cfg.trim_rate if cfg else None,
            "bs": cfg.boot if cfg else 0,
            "h_0": cfg.h_0 if cfg else None,
            "seed": cfg.seed if cfg else None,
            "zx": [nm for block in est.moment_system.instruments.names for nm in block],
            "qx": cfg.threshold_var if cfg else None,
            "depvar": self.depvar,
            "indepvar": list(est.moment_system.x_names),
            "panelvar": self.panel_var,
            "timevar": self.time_var,
            "moment_conditions": self.moment_conditions,
            "properties": "b V",
            "names": names,
            "b": dict(zip(names, _clean(est.coef))),
            "V": [_clean(row) for row in est.vcov],
            "CI": [_clean(row) for row in est.ci95],
            "criterion": _clean([est.criterion_value])[0],
            "bandwidth": est.bandwidth,
            "sup_wald": None if self.linearity is None else self.linearity.sup_wald,
            "flags": list(est.flags),
        }


def _fmt(v, spec: str = ".7g") -> str:
    return "." if v is None or not math.isfinite(v) else format(v, spec)


def _clean(values) -> list:
    return [None if not math.isfinite(float(v)) else float(v) for v in values]


def run(config: RunConfig) -> RunReport:
    """Load data, estimate, optionally bootstrap, and write outputs."""
    spec = config.to_spec()
    panel = load_csv(config.data, config.id_col, config.time_col)
    if config.subsample:
        panel = panel.where(config.subsample)
    est = two_step_estimate(spec, panel)
    lin = None
    if config.boot > 0 or config.wald_csv:
        lin = linearity_test(est, B=config.boot, seed=config.seed)
    boot_p = lin.p_value if (lin is not None and config.boot > 0) else -1.0

    z = est.zstat
    p = 2 * stats.norm.sf(np.abs(z))
    rows = [dict(name=nm, coef=float(c), se=float(s), z=float(zz), p=float(pp),
                 ci_low=float(lo), ci_high=float(hi))
            for nm, c, s, zz, pp, (lo, hi) in zip(est.names, est.coef, est.se, z, p, est.ci95)]
    report = RunReport(panel.n, panel.T, panel.id_name, panel.time_name, est.l,
                       config.depvar, rows, boot_p, est, lin, config)

    if config.output:
        with open(config.output, "w") as fh:
            json.dump(report.stored_results(), fh, indent=2)
            fh.write("\n")
    if config.wald_csv and lin is not None:
        with open(config.wald_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "wald"])
            w.writerows((repr(g), repr(v)) for g, v in lin.wald_curve)
    if config.boot_csv and lin is not None and lin.B > 0:
        with open(config.boot_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "supW_star"])
            w.writerows((b + 1, repr(float(v))) for b, v in enumerate(lin.boot_stats))
    return report


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        config = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        report = run(config)
    except (UsageError, SpecificationError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    print(report.text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
