"""Convergence studies against reference solutions, CSV output and the CLI.

Run ``python -m implicit_lowrank --help`` (or ``lowrank-bench``) for usage.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .integrators import DENSE_SIZE_LIMIT, METHODS, StepControls, StepFailure, evolve
from .linsolve import ConvergenceError
from .pde import PROBLEMS, REFERENCE_MAX_M, catalog, cfl_numbers, discretize, initial_low_rank, reference_solution

ERROR_COLUMNS = ["method", "n_T", "error", "rate", "F", "cpu_seconds", "cfl_adv", "cfl_diff"]
RANK_COLUMNS = ["step", "time", "rank", "fallback_flag"]
STRATEGY_FLAGS = {"gmres": "gmres", "fixedpoint": "fixed_point_with_gmres_fallback"}


@dataclass
class RunConfig:
    problem: str
    m: int = 99
    n_T: Sequence[int] = (40, 80, 160, 320)
    methods: Sequence[str] = ("M", "MA", "IE")
    eps1_policy: str = "zero"
    eps2_policy: object = "dt_squared"
    galerkin_strategy: str = "gmres"
    output_dir: Optional[str] = None
    reference_cache_dir: Optional[str] = None
    seed: int = 0
    problem_options: dict = field(default_factory=dict)
    t_end: Optional[float] = None
    reference_max_m: int = REFERENCE_MAX_M

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if "IE" in self.methods and self.m * self.m > DENSE_SIZE_LIMIT:
            raise ValueError(f"IE needs m*m <= {DENSE_SIZE_LIMIT}")
        if self.eps1_policy not in ("zero", "dt"):
            raise ValueError("eps1_policy must be 'zero' or 'dt'")
        if self.eps2_policy != "dt_squared" and not isinstance(self.eps2_policy, (int, float)):
            raise ValueError("eps2_policy must be 'dt_squared' or a number")
        if any(int(n) < 1 for n in self.n_T):
            raise ValueError("n_T values must be positive")

    def controls(self, dt: float) -> StepControls:
        eps1 = 0.0 if self.eps1_policy == "zero" else dt
        eps2 = None if self.eps2_policy == "dt_squared" else float(self.eps2_policy)
        return StepControls(dt, eps1, eps2, galerkin_strategy=self.galerkin_strategy)


@dataclass
class StudyRow:
    method: str
    n_T: int
    error: float
    rate: Optional[float]
    F: Optional[int]
    cpu_seconds: float
    cfl_adv: float
    cfl_diff: float
    failure: Optional[str] = None


@dataclass
class StudyResult:
    config: RunConfig
    rows: list = field(default_factory=list)
    histories: dict = field(default_factory=dict)  # (method, n_T) -> (times, ranks, flags)
    metadata: dict = field(default_factory=dict)

    def row(self, method: str, n_T: int) -> StudyRow:
        for r in self.rows:
            if r.method == method and r.n_T == n_T:
                return r
        raise KeyError((method, n_T))

    def errors(self, method: str) -> list:
        return [r.error for r in self.rows if r.method == method]

    @property
    def failed(self) -> bool:
        return any(r.failure for r in self.rows)


def convergence_rate(e_coarse: float, e_fine: float, n_coarse: int, n_fine: int) -> float:
    """Observed order ``log(e_coarse / e_fine) / log(n_fine / n_coarse)``."""
    return math.log(e_coarse / e_fine) / math.log(n_fine / n_coarse)


def run_study(cfg: RunConfig) -> StudyResult:
    """Errors, rates, fallback counts and timings for every (method, n_T) cell."""
    cfg.validate()
    result = StudyResult(cfg)
    if not cfg.methods:
        return result
    spec = catalog(cfg.problem, cfg.m, **cfg.problem_options)
    t_end = spec.t_end if cfg.t_end is None else cfg.t_end
    op = discretize(spec)
    X0 = initial_low_rank(spec)
    n_list = sorted(int(n) for n in cfg.n_T)

    if cfg.m <= cfg.reference_max_m:
        ref = reference_solution(spec, [t_end], cache_dir=cfg.reference_cache_dir)[0]
        result.metadata["reference"] = "rk4"
    else:
        n_ref = 4 * n_list[-1]
        ref = evolve("M", op, X0, 0.0, t_end, n_ref, cfg.controls(t_end / n_ref)).final_array()
        result.metadata["reference"] = f"self:M@n_T={n_ref}"
    ref_norm = np.linalg.norm(ref)

    for method in cfg.methods:
        prev = None
        for n in n_list:
            dt = t_end / n
            cfl_adv, cfl_diff = cfl_numbers(spec, dt)
            try:
                trace = evolve(method, op, X0, 0.0, t_end, n, cfg.controls(dt))
            except (StepFailure, ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as err:
                result.rows.append(StudyRow(method, n, math.nan, None, None, math.nan,
                                            cfl_adv, cfl_diff, failure=str(err)))
                prev = None
                continue
            err = float(np.linalg.norm(trace.final_array() - ref) / ref_norm)
            if not np.isfinite(err):
                result.rows.append(StudyRow(method, n, err, None, None, trace.wall_time,
                                            cfl_adv, cfl_diff, failure="non-finite solution"))
                prev = None
                continue
            rate = convergence_rate(prev[1], err, prev[0], n) if prev and err > 0 else None
            F = trace.fallback_count if method == "MA" else None
            result.rows.append(StudyRow(method, n, err, rate, F, trace.wall_time, cfl_adv, cfl_diff))
            flags = [0] + [1 if r.fallback_used else 0 for r in trace.reports]
            result.histories[(method, n)] = (list(trace.times), list(trace.ranks), flags)
            prev = (n, err)
    return result


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.17g}"
    return str(x)


def emit_csv(result: StudyResult, out_dir, timings: bool = True) -> list:
    """Write ``errors.csv`` and one ``ranks_<method>.csv`` per method.

    Rank histories are those of the largest ``n_T`` run of each method.
    With ``timings=False`` the ``cpu_seconds`` column is left empty so that
    reruns are byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / "errors.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERROR_COLUMNS)
        for r in result.rows:
            w.writerow([r.method, r.n_T, _fmt(r.error), _fmt(r.rate), _fmt(r.F),
                        _fmt(r.cpu_seconds) if timings else "", _fmt(r.cfl_adv), _fmt(r.cfl_diff)])
    written.append(path)
    for method in result.config.methods:
        runs = sorted(n for (m, n) in result.histories if m == method)
        path = out / f"ranks_{method}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RANK_COLUMNS)
            if runs:
                times, ranks, flags = result.histories[(method, runs[-1])]
                for k, (t, r, f) in enumerate(zip(times, ranks, flags)):
                    w.writerow([k, _fmt(float(t)), r, f])
        written.append(path)
    return written


def _short_sci(x: float) -> str:
    """``1.60(-1)`` style."""
    if not np.isfinite(x) or x <= 0:
        return "   fail "
    e = math.floor(math.log10(x))
    mant = x / 10**e
    if round(mant, 2) >= 10:
        mant, e = mant / 10, e + 1
    return f"{mant:.2f}({e})"


def format_table(result: StudyResult) -> str:
    """Text table with errors, [rates] and F, one row per n_T."""
    methods = list(result.config.methods)
    n_list = sorted({r.n_T for r in result.rows})
    lines = ["n_T".rjust(6) + "".join(m.rjust(26) for m in methods) + "   dt/h : mu dt/h^2"]
    for n in n_list:
        cells = []
        cfl = None
        for m in methods:
            r = result.row(m, n)
            cfl = (r.cfl_adv, r.cfl_diff)
            s = _short_sci(r.error)
            if r.rate is not None:
                s += f" [{r.rate:.2f}]"
            if r.F is not None:
                s += f" F={r.F}"
            cells.append(s.rjust(26))
        lines.append(str(n).rjust(6) + "".join(cells) + f"   {cfl[0]:.2g} : {cfl[1]:.2g}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# command line


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lowrank-bench", description="Convergence studies for implicit low-rank integrators.")
    p.add_argument("--problem", help=f"one of: {', '.join(PROBLEMS)}")
    p.add_argument("--m", type=int, default=99, help="interior grid points per direction")
    p.add_argument("--nT", default="40,80,160,320", help="comma-separated step counts")
    p.add_argument("--methods", default="M,MA,IE", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--eps1", choices=["0", "dt"], default="0")
    p.add_argument("--eps2", default="dt2", help="'dt2' for dt^2 or a number")
    p.add_argument("--galerkin", choices=sorted(STRATEGY_FLAGS), default="gmres")
    p.add_argument("--frequency", type=int, default=None, help="sine frequency (anisotropic_diffusion)")
    p.add_argument("--mu", type=float, default=None, help="diffusion scale (rotation_anisotropic)")
    p.add_argument("--out", default="results", help="output directory for CSV files")
    p.add_argument("--ref-cache", default=None, help="directory of cached reference solutions")
    p.add_argument("--no-timing", action="store_true", help="leave cpu_seconds empty (byte-stable output)")
    p.add_argument("--list-problems", action="store_true")
    p.add_argument("--selftest", action="store_true", help="run the desk-scale invariant checks")
    return p


def _split(s: str) -> list:
    return [x.strip() for x in s.split(",") if x.strip()]


def config_from_args(args) -> RunConfig:
    if args.problem is None:
        raise UsageError("--problem is required")
    try:
        n_T = [int(x) for x in _split(args.nT)]
    except ValueError:
        raise UsageError(f"--nT must be a comma list of integers, got {args.nT!r}")
    if args.eps2 == "dt2":
        eps2 = "dt_squared"
    else:
        try:
            eps2 = float(args.eps2)
        except ValueError:
            raise UsageError(f"--eps2 must be 'dt2' or a number, got {args.eps2!r}")
    options = {}
    if args.frequency is not None:
        options["frequency"] = args.frequency
    if args.mu is not None:
        options["mu"] = args.mu
    cfg = RunConfig(
        problem=args.problem, m=args.m, n_T=n_T, methods=_split(args.methods),
        eps1_policy="zero" if args.eps1 == "0" else "dt", eps2_policy=eps2,
        galerkin_strategy=STRATEGY_FLAGS[args.galerkin], output_dir=args.out,
        reference_cache_dir=args.ref_cache, problem_options=options,
    )
    try:
        cfg.validate()
        if options:
            catalog(cfg.problem, cfg.m, **options)
    except (ValueError, KeyError, TypeError) as err:
        raise UsageError(str(err))
    return cfg


def cli_main(argv=None) -> int:
    """0 on success, 1 on usage errors, 2 on numerical failure."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.list_problems:
            print("\n".join(PROBLEMS))
            return 0
        if args.selftest:
            from .selftest import run_selftest
            return 0 if run_selftest() else 2
        cfg = config_from_args(args)
    except UsageError as err:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"error: {err}", file=sys.stderr)
        return 1
    try:
        result = run_study(cfg)
    except (ValueError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    emit_csv(result, cfg.output_dir, timings=not args.no_timing)
    if result.rows:
        print(format_table(result))
    for r in result.rows:
        if r.failure:
            print(f"{r.method} n_T={r.n_T} failed: {r.failure}", file=sys.stderr)
    return 2 if result.failed else 0


def main():
    sys.exit(cli_main())
