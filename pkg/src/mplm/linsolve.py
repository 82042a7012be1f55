"""Assembly and solution of the per-step linear systems.

Every implicit step of the scheme solves  M y = b  with

    M = I - h * sum_r beta_r (P(y^{n-r}) - diag(D(y^{n-r}) e)) diag(1/sigma)

for positive weights sigma.  M has unit-plus-positive diagonal, non-positive
off-diagonal entries and a strictly column-diagonally-dominant transpose, so
it is an M-matrix: the inverse is entrywise non-negative, which is what makes
the scheme unconditionally positive.  Column dominance also means LU with
partial pivoting never actually pivots, so the factorization is sign-safe.

Dense systems go through LAPACK's row-pivoted LU (``numpy.linalg.solve``);
tridiagonal systems through banded Gaussian elimination
(``scipy.linalg.solve_banded``), which keeps the diffusion problems O(N).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .exceptions import NumericError, PwdViolationError

_EPS = np.finfo(float).eps

DENSE = "dense"
BANDED = "banded"


@dataclass(frozen=True)
class PDEval:
    """Cached production/destruction evaluation at one history state.

    `production` is the dense N x N matrix P(y); for banded problems it is
    ``None`` and `bands` holds ``(lower, upper)`` with lower[j] = P[j+1, j],
    upper[j] = P[j, j+1].  `destruction_sum` is D(y) e, the total destruction
    rate of each component.
    """

    destruction_sum: np.ndarray
    production: Optional[np.ndarray] = None
    bands: Optional[tuple] = None

    @property
    def dim(self) -> int:
        return self.destruction_sum.shape[0]


@dataclass(frozen=True)
class SystemMatrix:
    """The matrix M of one linearly implicit step.

    layout "dense": `data` is the (N, N) matrix.
    layout "banded": `data` is the (3, N) array in ``solve_banded`` ordering
    (super-diagonal, diagonal, sub-diagonal) for bandwidths (1, 1).
    """

    data: np.ndarray
    layout: str

    @property
    def dim(self) -> int:
        return self.data.shape[-1]

    def to_dense(self) -> np.ndarray:
        if self.layout == DENSE:
            return self.data
        n = self.dim
        m = np.zeros((n, n))
        m[np.arange(n), np.arange(n)] = self.data[1]
        m[np.arange(n - 1), np.arange(1, n)] = self.data[0, 1:]
        m[np.arange(1, n), np.arange(n - 1)] = self.data[2, :-1]
        return m


def assemble(evals: Sequence[PDEval], beta: np.ndarray, sigma: np.ndarray,
             h: float, banded: bool = False) -> SystemMatrix:
    """Build M = I - h sum_r beta_r (P_r - diag(D_r e)) diag(1/sigma).

    `evals` holds the cached history evaluations, newest first, so
    ``evals[r-1]`` belongs to y^{n-r}.  Only the first len(beta) entries
    are used.  Terms with beta_r = 0 are skipped.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        i = int(np.argmin(sigma))
        raise PwdViolationError(
            f"Patankar weight denominator sigma[{i}] = {sigma[i]} is not positive")
    if h < 0:
        raise ValueError(f"step size must be non-negative, got {h}")
    n = sigma.shape[0]
    loss = np.zeros(n)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        if banded:
            wl = np.zeros(n - 1)
            wu = np.zeros(n - 1)
            for r, b in enumerate(beta):
                if b == 0.0:
                    continue
                ev = evals[r]
                lower, upper = ev.bands
                wl += b * lower
                wu += b * upper
                loss += b * ev.destruction_sum
            ab = np.zeros((3, n))
            ab[0, 1:] = -h * wu / sigma[1:]
            ab[1] = 1.0 + h * loss / sigma
            ab[2, :-1] = -h * wl / sigma[:-1]
            if not np.all(np.isfinite(ab)):
                raise NumericError("non-finite entry in assembled banded system")
            return SystemMatrix(data=ab, layout=BANDED)

        w = np.zeros((n, n))
        for r, b in enumerate(beta):
            if b == 0.0:
                continue
            ev = evals[r]
            w += b * ev.production
            loss += b * ev.destruction_sum
        m = (-h) * (w / sigma[np.newaxis, :])
        idx = np.arange(n)
        m[idx, idx] += 1.0 + h * loss / sigma
        if not np.all(np.isfinite(m)):
            raise NumericError("non-finite entry in assembled system matrix")
    return SystemMatrix(data=m, layout=DENSE)


def solve_counted(m: SystemMatrix, b: np.ndarray):
    """Solve M x = b, returning ``(x, clamped)``.

    The M-matrix structure guarantees x >= 0 for b >= 0; negative round-off
    of magnitude up to 16 N eps ||b||_inf is clamped to zero and counted,
    anything larger is treated as an internal error.
    """
    b = np.asarray(b, dtype=float)
    try:
        if m.layout == BANDED:
            x = scipy.linalg.solve_banded((1, 1), m.data, b,
                                          overwrite_ab=False, overwrite_b=False,
                                          check_finite=False)
        else:
            x = np.linalg.solve(m.data, b)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericError(f"linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericError("linear solve produced non-finite values")
    clamped = 0
    neg = x < 0
    if np.any(neg):
        allowance = 16 * m.dim * _EPS * float(np.abs(b).max())
        worst = float(x.min())
        if -worst > allowance:
            raise NumericError(
                f"solve produced negative component {worst} beyond the "
                f"round-off allowance {allowance}; M-matrix structure violated")
        clamped = int(np.count_nonzero(neg))
        x[neg] = 0.0
    return x, clamped


def solve(m: SystemMatrix, b: np.ndarray, check: bool = False) -> np.ndarray:
    """Solve M x = b for non-negative b.

    With ``check=True`` the residual ||Mx - b||_inf is verified against
    64 N eps ||b||_inf.
    """
    x, _ = solve_counted(m, b)
    if check:
        residual = float(np.abs(m.to_dense() @ x - b).max())
        bound = 64 * m.dim * _EPS * float(np.abs(b).max())
        if residual > bound:
            raise NumericError(
                f"solve residual {residual} exceeds bound {bound}")
    return x


@dataclass(frozen=True)
class MMatrixReport:
    """Outcome of the structural checks on an assembled system matrix."""

    diagonal_positive: bool
    offdiag_nonpositive: bool
    column_dominant: bool
    offender: Optional[tuple] = None

    @property
    def ok(self) -> bool:
        return (self.diagonal_positive and self.offdiag_nonpositive
                and self.column_dominant)


def verify_mmatrix(m: SystemMatrix) -> MMatrixReport:
    """Check positive diagonal, non-positive off-diagonal entries and column
    diagonal dominance.  Used in validation mode; reports the first offending
    index instead of raising.

    The structural dominance margin is exactly 1 (the identity part), but
    both sides of the comparison round at the column scale h * loss / sigma,
    which can dwarf 1 when a weight is tiny; dominance is therefore checked
    up to a round-off allowance at that scale.
    """
    a = m.to_dense()
    n = a.shape[0]
    idx = np.arange(n)
    diag = a[idx, idx]
    offender = None

    diagonal_positive = bool(np.all(diag > 0))
    if not diagonal_positive:
        i = int(np.argmin(diag))
        offender = (i, i)

    off = a.copy()
    off[idx, idx] = 0.0
    offdiag_nonpositive = bool(np.all(off <= 0))
    if offdiag_nonpositive is False and offender is None:
        i, j = np.unravel_index(int(np.argmax(off)), off.shape)
        offender = (int(i), int(j))

    col_off = np.abs(off).sum(axis=0)
    allowance = 8 * n * _EPS * np.maximum(diag, col_off)
    column_dominant = bool(np.all(diag - col_off > -allowance))
    if column_dominant is False and offender is None:
        i = int(np.argmax(col_off - diag))
        offender = (i, i)

    return MMatrixReport(diagonal_positive=diagonal_positive,
                         offdiag_nonpositive=offdiag_nonpositive,
                         column_dominant=column_dominant,
                         offender=offender)
