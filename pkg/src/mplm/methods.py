"""Coefficient catalog for the MPLM-k(p) method family.

An explicit k-step linear multistep method with non-negative coefficient
vectors alpha, beta is convergent of order p when

    sum_r alpha_r = 1   and   sum_r (r^q alpha_r - q r^{q-1} beta_r) = 0,
                                                      q = 1, ..., p.

All catalog coefficients are stored as exact rationals and converted to
floating point once, so the order conditions can be verified with zero
residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Tuple

import numpy as np

F = Fraction


@dataclass(frozen=True)
class LMCoefficients:
    """Coefficients (k, p, alpha, beta) of one explicit linear multistep
    method.  `alpha_exact`/`beta_exact` carry the rational values when the
    set comes from the catalog; synthetic (e.g. perturbed) sets may omit
    them and are then validated in floating point."""

    name: str
    k: int
    p: int
    alpha: np.ndarray
    beta: np.ndarray
    alpha_exact: Optional[Tuple[Fraction, ...]] = None
    beta_exact: Optional[Tuple[Fraction, ...]] = None

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        if alpha.shape != (self.k,) or beta.shape != (self.k,):
            raise ValueError(
                f"{self.name}: alpha/beta must have length k = {self.k}")
        if np.any(alpha < 0) or np.any(beta < 0):
            raise ValueError(f"{self.name}: alpha and beta must be non-negative")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)


def _entry(name: str, p: int, alpha, beta) -> LMCoefficients:
    alpha = tuple(F(a) for a in alpha)
    beta = tuple(F(b) for b in beta)
    return LMCoefficients(
        name=name, k=len(alpha), p=p,
        alpha=np.array([float(a) for a in alpha]),
        beta=np.array([float(b) for b in beta]),
        alpha_exact=alpha, beta_exact=beta,
    )


def _build_catalog() -> Tuple[LMCoefficients, ...]:
    return (
        _entry("mpe", 1, (1,), (1,)),
        _entry("mplm-2-2", 2, (0, 1), (2, 0)),
        _entry("mplm-4-3", 3,
               (F(1, 4), 0, F(3, 4), 0),
               (F(35, 18), F(1, 3), 0, F(2, 9))),
        _entry("mplm-5-4", 4,
               (0, 0, 0, 0, 1),
               (F(75, 32), 0, F(25, 48), F(25, 12), F(5, 96))),
        _entry("mplm-7-5", 5,
               (0, 0, 0, 0, 0, 0, 1),
               (F(12, 5), 0, F(197, 720), F(701, 360), F(43, 30),
                F(107, 360), F(467, 720))),
        _entry("mplm-10-6", 6,
               (0, 0, 0, 0, 0, 0, 0, 0, 0, 1),
               (F(11125, 4536), 0, 0, F(50, 27), F(85, 36), 0, 0,
                F(125, 63), F(25, 24), F(25, 81))),
        # Second-order conditions pin the single nonzero weight for this
        # alpha support to r = 1 (q = 2 fails for any other placement).
        _entry("zhu-3-2", 2, (F(3, 4), 0, F(1, 4)), (F(3, 2), 0, 0)),
        _entry("zhu-4-3", 3,
               (F(16, 27), 0, 0, F(11, 27)),
               (F(16, 9), 0, 0, F(4, 9))),
    )


_CATALOG = _build_catalog()
_BY_NAME = {m.name: m for m in _CATALOG}


def catalog() -> Tuple[LMCoefficients, ...]:
    """All built-in coefficient sets, base method first."""
    return _CATALOG


def method_names() -> Tuple[str, ...]:
    return tuple(m.name for m in _CATALOG)


def get_method(name: str) -> LMCoefficients:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValueError(
            f"unknown method {name!r}; available: {', '.join(method_names())}"
        ) from None


def validate_order_conditions(coeffs: LMCoefficients) -> np.ndarray:
    """Residuals of the order conditions, as a length p+1 vector.

    residual[0] = |sum alpha_r - 1| and residual[q] =
    |sum_r (r^q alpha_r - q r^{q-1} beta_r)| for q = 1..p.  Catalog entries
    carry exact rationals, so their residuals are exactly zero.
    """
    if coeffs.alpha_exact is not None and coeffs.beta_exact is not None:
        alpha: Sequence = coeffs.alpha_exact
        beta: Sequence = coeffs.beta_exact
        one = F(1)
    else:
        alpha = coeffs.alpha
        beta = coeffs.beta
        one = 1.0
    out = np.zeros(coeffs.p + 1)
    out[0] = float(abs(sum(alpha) - one))
    for q in range(1, coeffs.p + 1):
        acc = sum(r ** q * a - q * r ** (q - 1) * b
                  for r, (a, b) in enumerate(zip(alpha, beta), start=1))
        out[q] = float(abs(acc))
    return out


@dataclass(frozen=True)
class MethodLadder:
    """Ordered embedding levels for the Patankar weight construction:
    ``levels[s-1]`` is an order-s method, starting from the one-step base
    method at order 1.  A ladder for an outer order-p method has p-1 levels,
    each with step count <= the outer k."""

    levels: Tuple[LMCoefficients, ...]

    def __post_init__(self):
        for s, lvl in enumerate(self.levels, start=1):
            if lvl.p != s:
                raise ValueError(
                    f"ladder level {s} must have order {s}, got "
                    f"{lvl.name} of order {lvl.p}")

    @property
    def max_steps(self) -> int:
        return max((lvl.k for lvl in self.levels), default=0)


_EMBEDDING_SEQUENCE = ("mpe", "mplm-2-2", "mplm-4-3", "mplm-5-4", "mplm-7-5")


def default_ladder(order: int, max_steps: int) -> MethodLadder:
    """Default embedding ladder for an outer method of the given order:
    orders 1..order-1 drawn from the catalog, checked against the outer
    step count."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if order - 1 > len(_EMBEDDING_SEQUENCE):
        raise ValueError(f"no embedding ladder available for order {order}")
    levels = tuple(get_method(n) for n in _EMBEDDING_SEQUENCE[:order - 1])
    for lvl in levels:
        if lvl.k > max_steps:
            raise ValueError(
                f"ladder level {lvl.name} needs {lvl.k} history states but "
                f"the outer method only keeps {max_steps}")
    return MethodLadder(levels=levels)
