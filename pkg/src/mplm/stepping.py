"""Time stepping: the base one-step method, the recursive Patankar weight
embedding, the multistep update, starting-value generation and the
integration driver.

One step of an order-p method advances the state by solving

    (I - h sum_r beta_r M^{n-r}) y^n = sum_r alpha_r y^{n-r},

where the matrices M^{n-r} are built from cached production/destruction
evaluations at the history states and from the Patankar weight denominators
sigma^n.  The weights are computed recursively: sigma^{n(0)} = y^{n-1}, and
each level s >= 1 solves the same kind of linear system with the
coefficients of an order-s method and the weights of level s-1.  Every
level's matrix is an M-matrix, so all weights and states stay positive for
any step size, and the row structure of the systems preserves e^T y exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.linalg.lapack import dgesv

from . import linsolve
from .exceptions import GridError, NumericError, PwdViolationError, StartupError
from .linsolve import PDEval, assemble, solve_counted, verify_mmatrix
from .methods import LMCoefficients, MethodLadder, default_ladder, get_method
from .pds import PDSProblem, REALMIN, _row_sums, _to_dense, rhs, sanitize_initial

_ONE = np.array([1.0])


def _pd_eval(problem: PDSProblem, y: np.ndarray, banded: bool) -> PDEval:
    """Evaluate and cache P/D at a state, in the layout the solver needs."""
    if banded:
        lower, upper = problem.production_bands(y)
        loss = np.zeros(problem.dim)
        # D = P^T for banded problems, so D e = column sums of P.
        loss[:-1] += lower
        loss[1:] += upper
        return PDEval(destruction_sum=loss, bands=(lower, upper))
    p = problem.production(y)
    d = problem.destruction(y)
    return PDEval(destruction_sum=_row_sums(d), production=_to_dense(p))


class StepHistory:
    """Ring buffer of the last k states with cached P/D evaluations.

    ``states[0]`` is the newest state y^{n-1}, ``states[r-1]`` is y^{n-r}.
    """

    def __init__(self, depth: int, banded: bool = False):
        self.depth = depth
        self.banded = banded
        self.states: List[np.ndarray] = []
        self.evals: List[PDEval] = []

    def __len__(self) -> int:
        return len(self.states)

    def push(self, y: np.ndarray, ev: PDEval) -> None:
        self.states.insert(0, y)
        self.evals.insert(0, ev)
        if len(self.states) > self.depth:
            self.states.pop()
            self.evals.pop()

    @classmethod
    def from_states(cls, problem: PDSProblem, states: Sequence[np.ndarray],
                    depth: Optional[int] = None,
                    banded: bool = False) -> "StepHistory":
        """Build a history from states ordered oldest to newest."""
        hist = cls(depth or len(states), banded=banded)
        for y in states:
            y = np.asarray(y, dtype=float)
            hist.push(y, _pd_eval(problem, y, banded))
        return hist

    def check_invariants(self, rel_tol: float = 1e-12) -> None:
        """Positivity and shared linear invariant of all stored states."""
        if not self.states:
            return
        total = self.states[0].sum()
        for r, y in enumerate(self.states):
            if np.any(y <= 0):
                raise NumericError(f"history state y^(n-{r + 1}) not positive")
            if abs(y.sum() - total) > rel_tol * abs(total):
                raise NumericError(
                    f"history state y^(n-{r + 1}) drifted off the linear "
                    f"invariant: {y.sum()} vs {total}")


def _combine(states: Sequence[np.ndarray], alpha: np.ndarray) -> np.ndarray:
    """sum_r alpha_r y^{n-r}, skipping zero coefficients."""
    out = None
    for r, a in enumerate(alpha):
        if a == 0.0:
            continue
        term = states[r] if a == 1.0 else a * states[r]
        out = term.copy() if out is None else out + term
    if out is None:
        raise ValueError("alpha has no nonzero entry")
    return out


def mpe_step(y_prev: np.ndarray, h: float, problem: PDSProblem) -> np.ndarray:
    """One step of the one-step base method: solve
    (I - h Phi(y_prev)) y = y_prev with weights sigma = y_prev.
    Unconditionally positive and conservative."""
    y_prev = np.asarray(y_prev, dtype=float)
    banded = problem.tridiagonal and problem.production_bands is not None
    ev = _pd_eval(problem, y_prev, banded)
    m = assemble([ev], _ONE, y_prev, h, banded=banded)
    x, _ = solve_counted(m, y_prev)
    return x


def _floor_weights(sigma: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Lift weight components below the solve's round-off allowance.

    The linear systems are M-matrices, so exact arithmetic gives strictly
    positive solutions; a computed component can only land at or below zero
    when its true value sits under the round-off floor (dominance margins
    become invisible to pivoting at extreme column scales).  Those
    components, and positive ones small enough to overflow a later
    1/sigma, are lifted to the allowance scale 16 N eps ||b||_inf: weights
    divide, so hard zeros and denormals are unusable.  Negative values
    beyond the allowance still raise.
    """
    if not np.all(np.isfinite(sigma)):
        raise NumericError("non-finite embedding weights")
    allowance = 16 * sigma.shape[0] * np.finfo(float).eps * float(np.abs(b).max())
    if allowance == 0.0:
        raise PwdViolationError("embedding right-hand side is zero")
    worst = float(sigma.min())
    if worst >= allowance:
        return sigma
    if -worst > allowance:
        raise PwdViolationError(
            f"embedding produced sigma = {worst}; beyond the round-off "
            f"allowance {allowance}, structural guarantee broken")
    return np.maximum(sigma, allowance)


def compute_pwd_ladder(history: StepHistory, h: float, ladder: MethodLadder,
                       validate: bool = False) -> np.ndarray:
    """Patankar weight denominators sigma^n by the recursive embedding.

    Starts from sigma^{n(0)} = y^{n-1}; level s solves the order-s system
    whose matrices are built with the level s-1 weights.  Returns the
    top-level weights, which depend only on the history and satisfy
    sigma = y(t_n) + O(h^p) for an order-p ladder top of p-1 levels.
    """
    sigma = history.states[0]
    for level in ladder.levels:
        if len(history) < level.k:
            raise ValueError(
                f"ladder level {level.name} needs {level.k} history states, "
                f"have {len(history)}")
        m = assemble(history.evals[:level.k], level.beta, sigma, h,
                     banded=history.banded)
        if validate:
            report = verify_mmatrix(m)
            if not report.ok:
                raise NumericError(
                    f"M-matrix check failed at ladder level {level.name}: "
                    f"{report}")
        b = _combine(history.states, level.alpha)
        sigma, _ = solve_counted(m, b)
        sigma = _floor_weights(sigma, b)
    return sigma


def _mplm_step_counted(history: StepHistory, h: float,
                       coeffs: LMCoefficients, sigma: np.ndarray,
                       validate: bool = False):
    m = assemble(history.evals[:coeffs.k], coeffs.beta, sigma, h,
                 banded=history.banded)
    if validate:
        report = verify_mmatrix(m)
        if not report.ok:
            raise NumericError(f"M-matrix check failed: {report}")
    b = _combine(history.states, coeffs.alpha)
    return solve_counted(m, b)


def mplm_step(history: StepHistory, h: float, coeffs: LMCoefficients,
              sigma: np.ndarray) -> np.ndarray:
    """One multistep update given precomputed weight denominators.

    The output is positive for any h > 0 and carries the same e^T invariant
    as the history, provided sigma > 0 was computed from the history alone.
    """
    y, _ = _mplm_step_counted(history, h, coeffs, sigma)
    return y


# ---------------------------------------------------------------------------
# Starting values
# ---------------------------------------------------------------------------

def _extrapolated_step(f: Callable, y: np.ndarray, g: float,
                       depth: int) -> Optional[np.ndarray]:
    """One explicit step of size g with even order 2*depth.

    Midpoint chains with n = 2, 4, ..., 2*depth substeps, smoothed endpoint,
    Richardson-extrapolated in g^2 (the increments are linear combinations
    of f evaluations, so linear invariants are preserved exactly).  Returns
    None as soon as anything overflows.
    """
    prev_row: List[np.ndarray] = []
    counts = [2 * (j + 1) for j in range(depth)]
    for j, n in enumerate(counts):
        sub = g / n
        z0 = y
        z1 = z0 + sub * f(z0)
        for _ in range(n - 1):
            z0, z1 = z1, z0 + (2.0 * sub) * f(z1)
        if not np.all(np.isfinite(z1)):
            return None
        entry = 0.5 * (z0 + z1 + sub * f(z1))
        row = [entry]
        for i in range(j):
            ratio = counts[j] / counts[j - i - 1]
            row.append(row[i] + (row[i] - prev_row[i]) / (ratio * ratio - 1.0))
        if not np.all(np.isfinite(row[-1])):
            return None
        prev_row = row
    return prev_row[-1]


def _reference_substeps(f: Callable, y: np.ndarray, h: float, substeps: int,
                        depth: int) -> Optional[np.ndarray]:
    g = h / substeps
    for _ in range(substeps):
        y = _extrapolated_step(f, y, g, depth)
        if y is None:
            return None
    return y


def startup(problem: PDSProblem, h: float, method: LMCoefficients,
            floor: float = REALMIN, substeps: int = 4, max_depth: int = 20,
            count: Optional[int] = None,
            y0: Optional[np.ndarray] = None) -> List[np.ndarray]:
    """Starting states y^1 ... y^{k-1} for a k-step method.

    Each interval is integrated with `substeps` explicit one-step
    extrapolation steps of order >= p, then projected: non-positive
    components are lifted to `floor` and the vector rescaled so that
    e^T y matches e^T y^0 exactly.  Whenever lifting was needed (or the
    integration blew up) the substep count is doubled and the interval
    retried, up to `max_depth` times.
    """
    k = method.k
    needed = k - 1 if count is None else min(count, k - 1)
    if needed <= 0:
        return []
    depth = (method.p + 1) // 2  # extrapolation order 2*depth >= p
    f = lambda y: rhs(problem, y)
    y = problem.y0 if y0 is None else np.asarray(y0, dtype=float)
    target = float(y.sum())
    out: List[np.ndarray] = []
    for _ in range(needed):
        r = substeps
        for _attempt in range(max_depth + 1):
            with np.errstate(over="ignore", invalid="ignore", under="ignore"):
                z = _reference_substeps(f, y, h, r, depth)
            if z is not None:
                lifted = z <= 0.0
                if np.any(lifted):
                    z = z.copy()
                    z[lifted] = floor
                total = float(z.sum())
                if np.isfinite(total) and total > 0:
                    z = z * (target / total)
                    if not np.any(lifted) and np.all(z > 0):
                        break
            r *= 2
        else:
            raise StartupError(
                f"no positive starting state after {max_depth} refinements "
                f"(h = {h}, method {method.name})")
        out.append(z)
        y = z
    return out


# ---------------------------------------------------------------------------
# Integration driver
# ---------------------------------------------------------------------------

def _run_dense_fast(problem: PDSProblem, method: LMCoefficients,
                    levels: Sequence[LMCoefficients], h: float,
                    first: int, last: int, history: StepHistory,
                    record: Callable) -> None:
    """Inner loop for dense problems without per-step validation.

    Equivalent to the compute_pwd_ladder/mplm_step pair but with the history
    in ring buffers: the weighted sums of all embedding levels and the outer
    step are evaluated as single matrix products against column-permuted
    coefficient matrices, and the linear systems go straight to LAPACK.
    Summation order differs from the reference path by round-off only.
    """
    k = method.k
    dim = problem.dim
    rows = list(levels) + [method]
    n_rows = len(rows)
    coeff_b = np.zeros((n_rows, k))
    coeff_a = np.zeros((n_rows, k))
    for i, lvl in enumerate(rows):
        coeff_b[i, :lvl.k] = lvl.beta
        coeff_a[i, :lvl.k] = lvl.alpha

    # Physical ring slots: slot (head - r + 1) mod k holds y^{n-r}.
    p_flat = np.empty((k, dim * dim))
    de_stack = np.empty((k, dim))
    y_stack = np.empty((k, dim))
    for r in range(1, min(k, len(history)) + 1):
        slot = (-r) % k
        ev = history.evals[r - 1]
        p_flat[slot] = ev.production.ravel()
        de_stack[slot] = ev.destruction_sum
        y_stack[slot] = history.states[r - 1]
    head = (-1) % k
    y_prev = history.states[0]

    diag = np.arange(dim)
    ages = np.arange(k)
    m_buf = np.empty((dim, dim))
    # Conservative weight floor: every right-hand side is componentwise
    # below the conserved total, so clearing this bound implies clearing
    # the per-solve allowance of _floor_weights.
    safe_floor = 16 * dim * np.finfo(float).eps * float(y_prev.sum())

    with np.errstate(over="ignore", invalid="ignore", divide="ignore",
                     under="ignore"):
        for idx in range(first, last + 1):
            perm = (head - ages) % k
            bw = coeff_b[:, perm]
            w_all = bw @ p_flat
            loss_all = bw @ de_stack
            b_all = coeff_a[:, perm] @ y_stack

            sigma = y_prev
            y_new = None
            for i in range(n_rows):
                # Divide by sigma before scaling with h: the quotients are
                # moderate when numerator and weight share a scale, while
                # h/sigma alone can overflow for weights near realmin.
                np.divide(w_all[i].reshape(dim, dim), sigma, out=m_buf)
                m_buf *= -h
                m_buf[diag, diag] += 1.0 + h * (loss_all[i] / sigma)
                _, _, x, info = dgesv(m_buf, b_all[i],
                                      overwrite_a=1, overwrite_b=0)
                if info != 0:
                    raise NumericError(f"linear solve failed at step {idx} "
                                       f"(lapack info {info})")
                if i + 1 < n_rows:
                    if not (x.min() >= safe_floor):
                        x = _floor_weights(x, b_all[i])
                    sigma = x
                else:
                    y_new = x
            record(idx, y_new, _count_clamped(y_new, b_all[-1], dim, idx))
            head = (head + 1) % k
            ev = _pd_eval(problem, y_new, banded=False)
            p_flat[head] = ev.production.ravel()
            de_stack[head] = ev.destruction_sum
            y_stack[head] = y_new
            y_prev = y_new
            history.push(y_new, ev)


def _count_clamped(y: np.ndarray, b: np.ndarray, dim: int, idx: int) -> int:
    neg = y < 0
    if not neg.any():
        return 0
    allowance = 16 * dim * np.finfo(float).eps * float(np.abs(b).max())
    if float(-y.min()) > allowance:
        raise NumericError(
            f"solve produced negative component {y.min()} at step {idx}")
    count = int(np.count_nonzero(neg))
    y[neg] = 0.0
    return count


@dataclass
class Trajectory:
    """Stored states on the uniform grid plus per-step diagnostics.

    `times`/`states` hold every ``store_every``-th step (always including
    t = 0 and t = T); the diagnostic arrays cover every step 0..n_steps.
    """

    times: np.ndarray
    states: np.ndarray
    h: float
    n_steps: int
    store_every: int
    method: str
    problem: str
    solver: str
    min_component: np.ndarray
    conservation_residual: np.ndarray
    clamp_count: np.ndarray

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def max_conservation_residual(self) -> float:
        return float(self.conservation_residual.max())

    @property
    def min_over_run(self) -> float:
        return float(self.min_component.min())


def _resolve_grid(problem: PDSProblem, h: Optional[float],
                  n_steps: Optional[int]):
    t = problem.horizon
    if (h is None) == (n_steps is None):
        raise GridError("specify exactly one of h and n_steps")
    if n_steps is not None:
        if n_steps < 1 or n_steps != int(n_steps):
            raise GridError(f"n_steps must be a positive integer, got {n_steps}")
        return t / int(n_steps), int(n_steps)
    if not h > 0:
        raise GridError(f"step size must be positive, got {h}")
    ratio = t / h
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-8 * max(1.0, ratio):
        raise GridError(
            f"horizon {t} is not an integer multiple of h = {h} (T/h = {ratio})")
    return float(h), n


def integrate(problem: PDSProblem,
              method: Union[str, LMCoefficients],
              h: Optional[float] = None,
              n_steps: Optional[int] = None,
              ladder: Optional[MethodLadder] = None,
              sigma_mode: str = "ladder",
              starting: Union[None, str, Sequence[np.ndarray]] = None,
              floor: float = REALMIN,
              validate: bool = False,
              store_every: int = 1,
              startup_substeps: int = 4,
              solver: str = "auto") -> Trajectory:
    """Integrate a production-destruction problem over [0, T].

    Parameters
    ----------
    method : name or LMCoefficients
        Outer multistep method.
    h, n_steps
        Uniform grid spec; exactly one must be given and T/h must be an
        integer.
    ladder
        Embedding ladder for the Patankar weights (default: catalog ladder
        of orders 1..p-1).
    sigma_mode : {"ladder", "previous"}
        "previous" forces sigma = y^{n-1} (first-order weights) instead of
        the embedding; positivity and conservation are unaffected, accuracy
        drops to first order.
    starting : None, "analytic", or sequence of states
        Source of y^1..y^{k-1}.  Default is the guarded startup integrator;
        "analytic" samples the attached exact solution.
    validate : bool
        Run M-matrix and history-invariant checks on every step.
    store_every : int
        Keep every m-th state (must divide n_steps); diagnostics always
        cover every step.
    solver : {"auto", "dense", "banded"}
        "auto" uses banded elimination when the problem declares the
        tridiagonal structure hint.
    """
    if isinstance(method, str):
        method = get_method(method)
    if sigma_mode not in ("ladder", "previous"):
        raise ValueError(f"unknown sigma_mode {sigma_mode!r}")
    if solver not in ("auto", "dense", "banded"):
        raise ValueError(f"unknown solver {solver!r}")
    h, n = _resolve_grid(problem, h, n_steps)
    if store_every < 1 or n % store_every:
        raise GridError(
            f"store_every = {store_every} must divide n_steps = {n}")
    banded = problem.tridiagonal and problem.production_bands is not None
    if solver == "dense":
        banded = False
    elif solver == "banded" and not banded:
        raise ValueError("problem declares no banded structure")

    y0, _ = sanitize_initial(problem.y0, floor)
    total0 = float(y0.sum())
    k = method.k
    use_ladder = sigma_mode == "ladder" and method.p >= 2
    if use_ladder and ladder is None:
        ladder = default_ladder(method.p, k)

    n_start = min(k - 1, n)
    if starting is None:
        start_states = startup(problem, h, method, floor=floor,
                               substeps=startup_substeps, count=n_start, y0=y0)
    elif isinstance(starting, str):
        if starting != "analytic":
            raise ValueError(f"unknown starting mode {starting!r}")
        if problem.analytic is None:
            raise ValueError("problem has no analytic solution attached")
        start_states = [np.asarray(problem.analytic(m * h), dtype=float)
                        for m in range(1, n_start + 1)]
    else:
        start_states = [np.array(s, dtype=float) for s in starting]
        if len(start_states) < n_start:
            raise ValueError(
                f"{n_start} starting states required, got {len(start_states)}")
        start_states = start_states[:n_start]
    for m, s in enumerate(start_states, start=1):
        if s.shape != (problem.dim,) or np.any(s <= 0):
            raise StartupError(f"starting state y^{m} is not positive")

    min_component = np.empty(n + 1)
    conservation = np.empty(n + 1)
    clamps = np.zeros(n + 1, dtype=np.int64)
    min_component[0] = y0.min()
    conservation[0] = 0.0

    stored_times = [0.0]
    stored_states = [y0]
    history = StepHistory(k, banded=banded)
    history.push(y0, _pd_eval(problem, y0, banded))

    def record(idx: int, y: np.ndarray, nclamp: int) -> None:
        if not np.all(np.isfinite(y)):
            raise NumericError(f"non-finite state at step {idx}")
        low = y.min()
        if low < REALMIN:
            # Round-off zeros (clamped negatives) and denormals: lift to a
            # tiny positive value and restore the conserved sum exactly;
            # states must stay strictly positive and invertible as weights.
            if low < 0.0:
                raise NumericError(
                    f"negative state component {low} at step {idx}")
            tiny = y < REALMIN
            y[tiny] = 16 * problem.dim * np.finfo(float).eps * total0
            y *= total0 / y.sum()
            nclamp += int(np.count_nonzero(tiny))
            low = y.min()
        min_component[idx] = low
        conservation[idx] = abs(y.sum() - total0)
        clamps[idx] = nclamp
        if idx % store_every == 0:
            stored_times.append(idx * h)
            stored_states.append(y)

    for m, y in enumerate(start_states, start=1):
        record(m, y, 0)
        history.push(y, _pd_eval(problem, y, banded))

    levels = ladder.levels if use_ladder else ()
    if not validate and not banded and n_start + 1 <= n:
        _run_dense_fast(problem, method, levels, h, n_start + 1, n,
                        history, record)
    else:
        for idx in range(n_start + 1, n + 1):
            if validate:
                history.check_invariants()
            if use_ladder:
                sigma = compute_pwd_ladder(history, h, ladder,
                                           validate=validate)
            else:
                sigma = history.states[0]
            y, nclamp = _mplm_step_counted(history, h, method, sigma,
                                           validate=validate)
            record(idx, y, nclamp)
            history.push(y, _pd_eval(problem, y, banded))

    return Trajectory(
        times=np.asarray(stored_times),
        states=np.asarray(stored_states),
        h=h,
        n_steps=n,
        store_every=store_every,
        method=method.name,
        problem=problem.label,
        solver=linsolve.BANDED if banded else linsolve.DENSE,
        min_component=min_component,
        conservation_residual=conservation,
        clamp_count=clamps,
    )
