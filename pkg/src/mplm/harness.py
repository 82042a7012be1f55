"""Convergence studies, error metrics and work-precision measurements.

Reference solutions use the attached analytic formula when one exists;
otherwise a fine-step run of the highest-order catalog method (step size
h_min/16 by default) whose self-convergence against the next-coarser
refinement is checked.  Error metrics:

* ``max``       E(h)   = max_n ||y_ref^n - y^n||_inf
* ``mean-rel``  eps(h) = mean_i sqrt(nbar sum_n d_in^2) / (nbar sum_n ref_in)
                (sums over n = 1..nbar)
* ``rel-max``   e(h)   = E(h) / max_n ||y_ref^n||_inf

and the observed order p_hat = log2(E(h)/E(h/2)) between consecutive
halvings.  Reports serialize to CSV with 17 significant digits.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from .exceptions import GridError, MetricError, ReferenceSolutionError
from .methods import LMCoefficients, get_method
from .pds import PDSProblem, REALMIN
from .problems import DiffusionGrid, H_LABEL_SCALE
from .stepping import Trajectory, integrate

REFERENCE_METHOD = "mplm-10-6"


def _states_of(traj) -> np.ndarray:
    return traj.states if isinstance(traj, Trajectory) else np.asarray(traj, float)


def _check_grids(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MetricError(f"trajectory grids differ: {a.shape} vs {b.shape}")


def max_abs_error(traj, ref) -> float:
    """E(h): worst infinity-norm deviation over the whole grid."""
    a, b = _states_of(traj), _states_of(ref)
    _check_grids(a, b)
    return float(np.abs(b - a).max())


def observed_order(err_coarse: float, err_fine: float) -> float:
    """p_hat = log2(E(h) / E(h/2))."""
    if not err_coarse > 0 or not err_fine > 0:
        raise MetricError("observed order needs two positive errors")
    return float(np.log2(err_coarse / err_fine))


def mean_relative_error(traj, ref) -> float:
    """Mean over components of the time-aggregated relative deviation,
    with sums running over steps 1..nbar (the initial state is shared)."""
    a, b = _states_of(traj), _states_of(ref)
    _check_grids(a, b)
    nbar = a.shape[0] - 1
    if nbar < 1:
        raise MetricError("need at least one step")
    diff = b[1:] - a[1:]
    denom = nbar * b[1:].sum(axis=0)
    if np.any(denom == 0):
        raise MetricError("reference component sums to zero")
    num = np.sqrt(nbar * (diff ** 2).sum(axis=0))
    return float(np.mean(num / denom))


def relative_max_error(traj, ref) -> float:
    """e(h) = E(h) / max_n ||ref^n||_inf."""
    b = _states_of(ref)
    scale = float(np.abs(b).max())
    if scale == 0:
        raise MetricError("reference is identically zero")
    return max_abs_error(traj, ref) / scale


class MassResidual(NamedTuple):
    """Both readings of the finite-volume conservation diagnostic:
    `pointwise` is dx * max_n sum_j |v_j(t_n) - f_j| (deviation from the
    initial profile), `conservation` is dx * max_n |sum_j v_j - sum_j f_j|
    (drift of the discrete mass)."""
    pointwise: float
    conservation: float


def mass_residual(traj, grid: Union[DiffusionGrid, float]) -> MassResidual:
    states = _states_of(traj)
    dx = grid if isinstance(grid, (int, float)) else grid.dx
    f = states[0]
    pointwise = dx * float(np.abs(states - f).sum(axis=1).max())
    conservation = dx * float(np.abs(states.sum(axis=1) - f.sum()).max())
    return MassResidual(pointwise=pointwise, conservation=conservation)


_METRICS = {
    "max": max_abs_error,
    "mean-rel": mean_relative_error,
    "rel-max": relative_max_error,
}


# ---------------------------------------------------------------------------
# Reference solutions
# ---------------------------------------------------------------------------

class Reference(NamedTuple):
    """Reference states plus an accuracy-floor estimate.

    `floor` is 0 for analytic references.  For numerical ones it is the
    measured difference between the two self-convergence refinements: an
    upper bound on the coarser run's error in the discretization-dominated
    regime, and of the order of the accumulated round-off once that
    dominates.  Errors measured near this floor say nothing about the
    method under study.
    """
    states: np.ndarray
    floor: float


def reference_with_floor(problem: PDSProblem, times: np.ndarray,
                         tol: float = 1e-9, refine: int = 16,
                         check: bool = True,
                         method: str = REFERENCE_METHOD,
                         floor: float = REALMIN) -> Reference:
    """Reference states on the given uniform grid, with accuracy estimate.

    Analytic when available.  Otherwise the problem is integrated with step
    h/refine and, when ``check`` is set, once more one refinement coarser;
    the two runs must agree to `tol` relative or a
    :class:`ReferenceSolutionError` is raised.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.shape[0] < 2 or times[0] != 0.0:
        raise GridError("reference grid must start at 0 and hold >= 2 points")
    spacing = np.diff(times)
    if not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0.0):
        raise GridError("reference grid must be uniform")
    if problem.analytic is not None:
        states = np.array([problem.analytic(t) for t in times])
        return Reference(states=states, floor=0.0)

    nbar = times.shape[0] - 1
    if refine < 2 or refine % 2:
        raise ValueError(f"refine must be an even integer >= 2, got {refine}")
    fine = integrate(problem, method, n_steps=nbar * refine,
                     store_every=refine, floor=floor)
    states = fine.states
    floor_est = 0.0
    if check:
        coarse = integrate(problem, method, n_steps=nbar * refine // 2,
                           store_every=refine // 2, floor=floor)
        scale = float(np.abs(states).max())
        diff = float(np.abs(states - coarse.states).max())
        if diff > tol * scale:
            raise ReferenceSolutionError(
                f"reference self-convergence failed: refinements differ by "
                f"{diff} ({diff / scale} relative), tolerance {tol} relative")
        floor_est = diff
    return Reference(states=states, floor=floor_est)


def reference_solution(problem: PDSProblem, times: np.ndarray,
                       tol: float = 1e-9, refine: int = 16,
                       check: bool = True,
                       method: str = REFERENCE_METHOD,
                       floor: float = REALMIN) -> np.ndarray:
    """Reference states on the given uniform grid (see
    :func:`reference_with_floor`)."""
    return reference_with_floor(problem, times, tol=tol, refine=refine,
                                check=check, method=method, floor=floor).states


# ---------------------------------------------------------------------------
# Convergence studies
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass
class ConvergenceRow:
    h: float
    error: float
    p_hat: Optional[float]
    conservation_residual: float   # relative e^T drift
    min_component: float
    wall_time_s: float
    plateau: bool = False
    mass_residual: Optional[float] = None  # dx-weighted absolute drift


@dataclass
class ConvergenceReport:
    method: str
    problem: str
    metric: str
    rows: List[ConvergenceRow]
    h_label_scale: float = 1.0

    def csv_text(self, timings: bool = True) -> str:
        buf = io.StringIO()
        buf.write(f"# h_label_scale={_fmt(self.h_label_scale)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        header = ["method", "problem", "h", "metric", "error", "p_hat",
                  "conservation_residual", "min_component", "wall_time_s"]
        has_mass = any(r.mass_residual is not None for r in self.rows)
        if has_mass:
            header.append("mass_residual")
        writer.writerow(header)
        for r in self.rows:
            row = [self.method, self.problem, _fmt(r.h), self.metric,
                   _fmt(r.error),
                   "" if r.p_hat is None else _fmt(r.p_hat),
                   _fmt(r.conservation_residual),
                   _fmt(r.min_component),
                   _fmt(r.wall_time_s) if timings else ""]
            if has_mass:
                row.append("" if r.mass_residual is None else
                           _fmt(r.mass_residual))
            writer.writerow(row)
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def __str__(self) -> str:
        lines = [f"{self.problem} / {self.method} ({self.metric})",
                 f"{'h':>14} {'error':>13} {'p_hat':>7} "
                 f"{'cons.res':>10} {'min':>10}"]
        for r in self.rows:
            phat = "---" if r.p_hat is None else f"{r.p_hat:.2f}"
            star = "*" if r.plateau else " "
            lines.append(f"{r.h:14.8g} {r.error:13.4e} {phat:>7}{star}"
                         f"{r.conservation_residual:10.2e} "
                         f"{r.min_component:10.2e}")
        if any(r.plateau for r in self.rows):
            lines.append("(* round-off plateau)")
        return "\n".join(lines)

    @property
    def final_p_hat(self) -> Optional[float]:
        """p_hat of the finest pair not yet in the round-off plateau."""
        best = None
        for prev, cur in zip(self.rows, self.rows[1:]):
            if cur.p_hat is not None and not (prev.plateau or cur.plateau):
                best = cur.p_hat
        return best

    @property
    def max_p_hat(self) -> Optional[float]:
        vals = [cur.p_hat for prev, cur in zip(self.rows, self.rows[1:])
                if cur.p_hat is not None and not (prev.plateau or cur.plateau)]
        return max(vals) if vals else None


def _halving_steps(problem: PDSProblem, h_list: Sequence[float]) -> List[int]:
    from .stepping import _resolve_grid
    steps = []
    for h in h_list:
        _, n = _resolve_grid(problem, h, None)
        steps.append(n)
    for a, b in zip(steps, steps[1:]):
        if b != 2 * a:
            raise GridError(
                f"h values must halve between consecutive rows, got steps "
                f"{a} then {b}")
    return steps


def convergence_study(problem: PDSProblem, method: Union[str, LMCoefficients],
                      h_list: Sequence[float], metric: str = "max",
                      reference: Union[None, np.ndarray, Reference] = None,
                      reference_tol: float = 1e-9,
                      validate: bool = False, floor: float = REALMIN,
                      jobs: int = 1,
                      plateau_rel: float = 1e-12) -> ConvergenceReport:
    """Run one method over a halving h ladder and report error, observed
    order and positivity/conservation audits per row.

    `reference` may carry precomputed reference states (or a
    :class:`Reference`) on the finest grid; coarser rows subsample it.
    Otherwise the reference is computed here.  Rows whose error falls below
    max(plateau_rel * ||ref||_inf, 4 * reference floor) are marked as
    round-off plateau: observed orders touching them measure noise.
    """
    if metric not in _METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from "
                         f"{sorted(_METRICS)}")
    if isinstance(method, str):
        method = get_method(method)
    steps = _halving_steps(problem, h_list)
    n_fine = steps[-1]
    t = problem.horizon
    fine_times = np.linspace(0.0, t, n_fine + 1)
    if reference is None:
        reference = reference_with_floor(problem, fine_times,
                                         tol=reference_tol, floor=floor)
    if isinstance(reference, Reference):
        ref_floor = reference.floor
        reference = reference.states
    else:
        ref_floor = 0.0
        reference = np.asarray(reference, dtype=float)
    if reference.shape != (n_fine + 1, problem.dim):
        raise GridError(
            f"reference has shape {reference.shape}, expected "
            f"{(n_fine + 1, problem.dim)}")
    ref_scale = float(np.abs(reference).max())
    metric_fn = _METRICS[metric]

    def run(n: int):
        start = time.perf_counter()
        traj = integrate(problem, method, n_steps=n, validate=validate,
                         floor=floor)
        elapsed = time.perf_counter() - start
        return traj, elapsed

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, steps))
    else:
        results = [run(n) for n in steps]

    rows: List[ConvergenceRow] = []
    prev_error = None
    for n, (traj, elapsed) in zip(steps, results):
        stride = n_fine // n
        ref_states = reference[::stride]
        err = metric_fn(traj, ref_states)
        if prev_error is not None and prev_error > 0 and err > 0:
            p_hat = observed_order(prev_error, err)
        else:
            p_hat = None
        threshold = max(plateau_rel * ref_scale, 4.0 * ref_floor)
        if metric != "max":
            threshold /= ref_scale  # relative metrics
        rel_cons = traj.max_conservation_residual / problem.invariant
        mass = None
        if problem.dx is not None:
            mass = mass_residual(traj, problem.dx).conservation
        rows.append(ConvergenceRow(
            h=t / n, error=err, p_hat=p_hat,
            conservation_residual=rel_cons,
            min_component=traj.min_over_run,
            wall_time_s=elapsed,
            plateau=bool(err < threshold),
            mass_residual=mass))
        prev_error = err
    return ConvergenceReport(
        method=method.name, problem=problem.label, metric=metric, rows=rows,
        h_label_scale=H_LABEL_SCALE.get(problem.label, 1.0))


# ---------------------------------------------------------------------------
# Work-precision measurements
# ---------------------------------------------------------------------------

@dataclass
class WorkPrecisionRow:
    method: str
    problem: str
    h: float
    error: float
    time_median_s: float
    time_mean_s: float
    repeats: int


@dataclass
class WorkPrecisionTable:
    rows: List[WorkPrecisionRow] = field(default_factory=list)

    def csv_text(self, timings: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "problem", "h", "error",
                         "time_median_s", "time_mean_s", "repeats"])
        for r in self.rows:
            writer.writerow([
                r.method, r.problem, _fmt(r.h), _fmt(r.error),
                _fmt(r.time_median_s) if timings else "",
                _fmt(r.time_mean_s) if timings else "",
                str(r.repeats)])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


def work_precision(problem: PDSProblem,
                   methods: Sequence[Union[str, LMCoefficients]],
                   h_list: Sequence[float], repeats: int = 10,
                   metric: str = "max",
                   reference: Optional[np.ndarray] = None,
                   floor: float = REALMIN) -> WorkPrecisionTable:
    """Timed error measurements over a (method, h) grid.

    Each cell runs once for warm-up (discarded) and `repeats` timed runs on
    the monotonic clock; cells execute strictly serially so timings are not
    polluted by concurrent load.  An empty method list yields an empty table.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    table = WorkPrecisionTable()
    if not methods:
        return table
    steps = _halving_steps(problem, h_list)
    n_fine = steps[-1]
    fine_times = np.linspace(0.0, problem.horizon, n_fine + 1)
    if reference is None:
        reference = reference_solution(problem, fine_times, floor=floor)
    metric_fn = _METRICS[metric]
    for method in methods:
        coeffs = get_method(method) if isinstance(method, str) else method
        for n in steps:
            integrate(problem, coeffs, n_steps=n, floor=floor)  # warm-up
            times = []
            traj = None
            for _ in range(repeats):
                start = time.perf_counter()
                traj = integrate(problem, coeffs, n_steps=n, floor=floor)
                times.append(time.perf_counter() - start)
            err = metric_fn(traj, reference[::n_fine // n])
            table.rows.append(WorkPrecisionRow(
                method=coeffs.name, problem=problem.label,
                h=problem.horizon / n, error=err,
                time_median_s=float(np.median(times)),
                time_mean_s=float(np.mean(times)),
                repeats=repeats))
    return table
