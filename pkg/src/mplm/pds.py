"""Production-destruction ODE systems and their structural checks.

A production-destruction system (PDS) is an ODE  y' = (P(y) - D(y)) e  where
P and D are elementwise non-negative N x N rate matrices and e is the all-ones
vector.  The fully conservative case additionally has P(z) = D(z)^T with zero
diagonals for every positive state z, which makes e^T y(t) a conserved
quantity.  Everything in this package assumes that structure; this module
holds the problem container and the validation helpers that check it.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import InvalidInitialStateError, StructuralViolationError

#: Smallest positive normal double; the default replacement for zero initial
#: components, which the Patankar weight construction cannot handle.
REALMIN = sys.float_info.min


def _is_sparse(a) -> bool:
    return sp.issparse(a)


def _to_dense(a) -> np.ndarray:
    if _is_sparse(a):
        return a.toarray()
    return np.asarray(a, dtype=float)


def _row_sums(a) -> np.ndarray:
    if _is_sparse(a):
        return np.asarray(a.sum(axis=1)).ravel()
    return np.asarray(a, dtype=float).sum(axis=1)


def _max_abs(a) -> float:
    if _is_sparse(a):
        if a.nnz == 0:
            return 0.0
        return float(abs(a).max())
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.abs(a).max())


@dataclass(frozen=True)
class PDSProblem:
    """A positive, fully conservative production-destruction problem.

    Parameters
    ----------
    dim : int
        Number of constituents N.
    production, destruction : callable
        Map a positive state vector to the N x N rate matrix P(y) resp. D(y).
        May return dense arrays or scipy sparse matrices.  Must be pure
        functions of the state: the problem object is shared freely between
        concurrent integrations.
    y0 : array
        Strictly positive initial state (sanitize with
        :func:`sanitize_initial` first if components may be zero).
    horizon : float
        Final time T > 0 of the integration interval [0, T].
    analytic : callable, optional
        Exact solution t -> y(t), when known.
    label : str
        Short name used in reports.
    tridiagonal : bool
        Structure hint: P(y) has nonzeros only on the first sub/super
        diagonal.  Enables O(N) banded linear solves.
    production_bands : callable, optional
        For tridiagonal problems, map y -> (lower, upper) where
        lower[j] = P[j+1, j] and upper[j] = P[j, j+1].  Implies D = P^T.
    dx : float, optional
        Cell width for finite-volume problems; consumed by the mass-residual
        diagnostics of the harness.
    """

    dim: int
    production: Callable[[np.ndarray], object]
    destruction: Callable[[np.ndarray], object]
    y0: np.ndarray
    horizon: float
    analytic: Optional[Callable[[float], np.ndarray]] = None
    label: str = ""
    tridiagonal: bool = False
    production_bands: Optional[Callable[[np.ndarray], tuple]] = None
    dx: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        y0 = np.asarray(self.y0, dtype=float)
        if y0.shape != (self.dim,):
            raise ValueError(f"y0 has shape {y0.shape}, expected ({self.dim},)")
        if not np.all(y0 > 0):
            raise InvalidInitialStateError(
                "y0 must be strictly positive; sanitize zero components first"
            )
        object.__setattr__(self, "y0", y0)

    @property
    def invariant(self) -> float:
        """Conserved total e^T y0."""
        return float(self.y0.sum())


class ConservativityCheck(NamedTuple):
    residual: float     # max over samples of max(|P - D^T|, |diag P|, |diag D|)
    passed: bool


def eval_pd(problem: PDSProblem, y, validate: bool = True):
    """Evaluate the production and destruction matrices at a state.

    With ``validate=True`` (the default for diagnostic use; the stepping hot
    loop calls the evaluators directly) the shapes and the elementwise
    non-negativity of both matrices are checked, and the first offending
    entry is reported by index.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (problem.dim,):
        raise ValueError(f"state has shape {y.shape}, expected ({problem.dim},)")
    p = problem.production(y)
    d = problem.destruction(y)
    if validate:
        for name, m in (("production", p), ("destruction", d)):
            shape = m.shape
            if shape != (problem.dim, problem.dim):
                raise ValueError(f"{name} matrix has shape {shape}, "
                                 f"expected ({problem.dim}, {problem.dim})")
            dense = _to_dense(m)
            if np.any(dense < 0):
                i, j = np.unravel_index(np.argmin(dense), dense.shape)
                raise StructuralViolationError(
                    f"negative {name} rate at ({i}, {j}): {dense[i, j]}")
    return p, d


def check_conservativity(problem: PDSProblem,
                         samples: Sequence[np.ndarray],
                         tol: float = 0.0) -> ConservativityCheck:
    """Measure how far the problem is from P(z) = D(z)^T with zero diagonals.

    Returns the worst residual over the given positive sample states,
    together with a pass flag (residual <= tol).  Never raises: a defective
    structure is reported, not rejected.
    """
    worst = 0.0
    for z in samples:
        p, d = eval_pd(problem, z, validate=False)
        if _is_sparse(p) or _is_sparse(d):
            diff = p - d.T
            residual = _max_abs(diff)
            diag = max(_max_abs(p.diagonal()), _max_abs(d.diagonal()))
        else:
            p = np.asarray(p, dtype=float)
            d = np.asarray(d, dtype=float)
            residual = float(np.abs(p - d.T).max())
            diag = float(max(np.abs(np.diag(p)).max(), np.abs(np.diag(d)).max()))
        worst = max(worst, residual, diag)
    return ConservativityCheck(residual=worst, passed=worst <= tol)


def rhs(problem: PDSProblem, y) -> np.ndarray:
    """Right-hand side (P(y) - D(y)) e.  Sums to zero for conservative
    problems, up to round-off."""
    y = np.asarray(y, dtype=float)
    if y.shape != (problem.dim,):
        raise ValueError(f"state has shape {y.shape}, expected ({problem.dim},)")
    p = problem.production(y)
    d = problem.destruction(y)
    return _row_sums(p) - _row_sums(d)


def sanitize_initial(y0, floor: float = REALMIN):
    """Replace zero (or sub-floor) components of an initial state by `floor`.

    Returns ``(state, modified)`` where `modified` lists the lifted indices.
    Idempotent.  Negative components and the all-zero vector are rejected.
    """
    y0 = np.asarray(y0, dtype=float).copy()
    if not floor > 0:
        raise ValueError(f"floor must be positive, got {floor}")
    if np.any(y0 < 0):
        i = int(np.argmin(y0))
        raise InvalidInitialStateError(
            f"initial state has negative component y[{i}] = {y0[i]}")
    if not np.any(y0 > 0):
        raise InvalidInitialStateError("initial state is identically zero")
    modified = np.flatnonzero(y0 < floor)
    y0[modified] = floor
    return y0, [int(i) for i in modified]
