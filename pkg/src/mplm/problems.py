"""Built-in production-destruction test problems.

Six problems are registered by name:

================  ====================================================
``linear``        two-component linear mass exchange (analytic solution)
``algal``         three-component nutrient/phytoplankton/detritus chain
``brusselator``   six-species Brusselator reaction network
``saceirqd``      eight-compartment epidemic model (Italy parameter set)
``diffusion``     finite-volume heterogeneous 1-D diffusion (tridiagonal)
``appendix``      single-channel exponential exchange (analytic solution)
================  ====================================================

All factories produce fully conservative systems: P(y) = D(y)^T with zero
diagonals, constructed entry by entry so the transpose identity is exact in
floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import GridError
from .pds import PDSProblem, REALMIN, sanitize_initial


def linear_test() -> PDSProblem:
    """Mass exchange between two constituents: y1' = -a y1 + y2 with a = 5,
    the complement for y2, on [0, 2] from y0 = (0.9, 0.1)."""
    a = 5.0

    def production(y):
        return np.array([[0.0, y[1]],
                         [a * y[0], 0.0]])

    def destruction(y):
        return np.array([[0.0, a * y[0]],
                         [y[1], 0.0]])

    def analytic(t):
        y1 = 1.0 / 6.0 + (0.9 - 1.0 / 6.0) * math.exp(-6.0 * t)
        return np.array([y1, 1.0 - y1])

    return PDSProblem(dim=2, production=production, destruction=destruction,
                      y0=np.array([0.9, 0.1]), horizon=2.0,
                      analytic=analytic, label="linear")


def algal_bloom() -> PDSProblem:
    """Nutrients taken up by phytoplankton (Michaelis-Menten rate) which
    decays to detritus at fixed rate a = 0.3, on [0, 30]."""
    a = 0.3

    def production(y):
        uptake = y[0] * y[1] / (y[0] + 1.0)
        p = np.zeros((3, 3))
        p[1, 0] = uptake
        p[2, 1] = a * y[1]
        return p

    def destruction(y):
        uptake = y[0] * y[1] / (y[0] + 1.0)
        d = np.zeros((3, 3))
        d[0, 1] = uptake
        d[1, 2] = a * y[1]
        return d

    return PDSProblem(dim=3, production=production, destruction=destruction,
                      y0=np.array([9.98, 0.01, 0.01]), horizon=30.0,
                      label="algal")


def brusselator(floor: float = REALMIN) -> PDSProblem:
    """Six-species Brusselator reaction network with unit rate constants on
    [0, 10].  Components 3 and 4 start at zero and are lifted to `floor`."""
    k1 = k2 = k3 = k4 = 1.0

    def production(y):
        p = np.zeros((6, 6))
        p[2, 1] = k2 * y[1] * y[4]
        p[3, 4] = k4 * y[4]
        p[4, 0] = k1 * y[0]
        p[4, 5] = k3 * y[4] ** 2 * y[5]
        p[5, 4] = k2 * y[1] * y[4]
        return p

    def destruction(y):
        d = np.zeros((6, 6))
        d[1, 2] = k2 * y[1] * y[4]
        d[4, 3] = k4 * y[4]
        d[0, 4] = k1 * y[0]
        d[5, 4] = k3 * y[4] ** 2 * y[5]
        d[4, 5] = k2 * y[1] * y[4]
        return d

    y0, _ = sanitize_initial(np.array([10.0, 10.0, 0.0, 0.0, 0.1, 0.1]), floor)
    return PDSProblem(dim=6, production=production, destruction=destruction,
                      y0=y0, horizon=10.0, label="brusselator")


#: Epidemic model parameters (Italy fit); state ordering
#: (S, A, C, E, I, R, Q, D).
SACEIRQD_PARAMS = {
    "N_P": 6.046e7,
    "alpha": 0.0194,
    "beta": 7.567,
    "sigma": 1.4633e-3,
    "eta": 9.180e-7,
    "tau": 1.109e-4,
    "xi": 0.263,
    "mu": 2.278e-6,
    "gamma": 0.021,
    "delta": 0.077,
    "lambda0": 0.157,
    "lambda1": 0.025,
    "kd0": 0.779,
    "kd1": 0.061,
}


def saceirqd_rates() -> tuple:
    """The quarantine-release and death rates, obtained in closed form from
    their defining integrals lam = 1e-4 lam0 int_0^{1e4} exp(-lam1 t) dt and
    likewise for k_d."""
    p = SACEIRQD_PARAMS
    lam = 1e-4 * p["lambda0"] * (1.0 - math.exp(-p["lambda1"] * 1e4)) / p["lambda1"]
    kd = 1e-4 * p["kd0"] * (1.0 - math.exp(-p["kd1"] * 1e4)) / p["kd1"]
    return lam, kd


def saceirqd(floor: float = REALMIN) -> PDSProblem:
    """Eight-compartment COVID-19 model (susceptible, asymptomatic,
    confined, exposed, infected, recovered, quarantined, dead) on [0, 180]
    days for a closed population of 6.046e7."""
    p = SACEIRQD_PARAMS
    n_p, alpha, beta = p["N_P"], p["alpha"], p["beta"]
    sigma, eta, tau = p["sigma"], p["eta"], p["tau"]
    xi, mu, gamma, delta = p["xi"], p["mu"], p["gamma"], p["delta"]
    lam, kd = saceirqd_rates()

    def _rates(y):
        # (row, col, value): row gains from col at this rate
        return (
            (1, 3, xi * y[3]),
            (2, 0, alpha * y[0]),
            (3, 0, y[0] * (eta + (beta * y[4] + sigma * y[1]) / n_p)),
            (3, 2, mu * y[2]),
            (4, 1, tau * y[1]),
            (4, 3, gamma * y[3]),
            (5, 6, lam * y[6]),
            (6, 4, delta * y[4]),
            (7, 6, kd * y[6]),
        )

    def production(y):
        m = np.zeros((8, 8))
        for i, j, v in _rates(y):
            m[i, j] = v
        return m

    def destruction(y):
        m = np.zeros((8, 8))
        for i, j, v in _rates(y):
            m[j, i] = v
        return m

    y0, _ = sanitize_initial(
        np.array([60459997.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0]), floor)
    return PDSProblem(dim=8, production=production, destruction=destruction,
                      y0=y0, horizon=180.0, label="saceirqd")


# ---------------------------------------------------------------------------
# Heterogeneous diffusion, finite-volume semi-discretization
# ---------------------------------------------------------------------------

def default_diffusivity(x):
    """Space-dependent diffusion coefficient
    1e-2 (x - 2/3)^2 atan(2x - 3)/(2x - 3) + 1e-5, positive everywhere."""
    x = np.asarray(x, dtype=float)
    u = 2.0 * x - 3.0
    safe = np.where(u == 0.0, 1.0, u)
    ratio = np.where(u == 0.0, 1.0, np.arctan(safe) / safe)
    return 1e-2 * (x - 2.0 / 3.0) ** 2 * ratio + 1e-5


#: Value of the (x-independent) default initial profile 2 - 2 sin^2(pi/2 - 1/4).
CONSTANT_PROFILE_VALUE = 2.0 - 2.0 * math.sin(math.pi / 2.0 - 0.25) ** 2


def constant_profile(x):
    x = np.asarray(x, dtype=float)
    return np.full_like(x, CONSTANT_PROFILE_VALUE)


def bump_profile(x):
    """Smooth positive bump, for runs where a flat profile is too boring."""
    x = np.asarray(x, dtype=float)
    return 0.2 + 2.0 * np.exp(-100.0 * (x - 0.5) ** 2)


@dataclass(frozen=True)
class DiffusionGrid:
    """Uniform cell-centered grid on [0, L] with nx+1 cells of width
    dx = L/nx; cell j has center (j + 1/2) dx, so interior edges sit at
    (j + 1) dx."""

    length: float = 1.0
    nx: int = 200
    diffusivity: Callable = default_diffusivity
    profile: Callable = constant_profile

    def __post_init__(self):
        if self.nx < 2:
            raise GridError(f"nx must be >= 2, got {self.nx}")
        if not self.length > 0:
            raise GridError(f"length must be positive, got {self.length}")
        if np.any(self.edge_diffusivity <= 0):
            raise GridError("diffusivity must be positive on all cell edges")

    @property
    def dx(self) -> float:
        return self.length / self.nx

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.nx + 1) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        """Interior edge coordinates, edge j between cells j and j+1."""
        return np.arange(1, self.nx + 1) * self.dx

    @property
    def edge_diffusivity(self) -> np.ndarray:
        return np.asarray(self.diffusivity(self.edges), dtype=float)


def diffusion_fv(grid: Optional[DiffusionGrid] = None,
                 horizon: float = 60.0) -> PDSProblem:
    """Conservative PDS form of the zero-flux finite-volume discretization
    of  u_t = (D(x) u_x)_x.

    Mass flows only between adjacent cells: cell j gains from cell j+-1 at
    rate y_{j+-1} D_edge / dx^2, and D = P^T, so the system matrix of the
    underlying linear ODE is symmetric with zero column sums and the
    discrete mass dx * sum_j v_j is conserved exactly.
    """
    grid = grid or DiffusionGrid()
    coeff = grid.edge_diffusivity / grid.dx ** 2  # one rate factor per inner edge
    n = grid.nx + 1

    def production_bands(y):
        lower = coeff * y[:-1]   # P[j+1, j]: cell j+1 gains from cell j
        upper = coeff * y[1:]    # P[j, j+1]: cell j gains from cell j+1
        return lower, upper

    def production(y):
        lower, upper = production_bands(y)
        return sp.diags_array([lower, upper], offsets=[-1, 1],
                              shape=(n, n), format="csr")

    def destruction(y):
        lower, upper = production_bands(y)
        return sp.diags_array([upper, lower], offsets=[-1, 1],
                              shape=(n, n), format="csr")

    y0 = np.asarray(grid.profile(grid.centers), dtype=float)
    return PDSProblem(dim=n, production=production, destruction=destruction,
                      y0=y0, horizon=horizon, label="diffusion",
                      tridiagonal=True, production_bands=production_bands,
                      dx=grid.dx)


def appendix_pds(mu: float = 1.0, i_star: int = 0, j_star: int = 1,
                 dim: int = 3, horizon: float = 1.0) -> PDSProblem:
    """Single production channel p[j*, i*] = mu * y[i*] (indices 0-based).

    The exact solution is y[i*] = exp(-mu t), y[j*] = 2 - exp(-mu t) and 1
    elsewhere starting from the all-ones state; useful as an analytic
    positivity/order witness.
    """
    if i_star == j_star:
        raise ValueError("i_star and j_star must differ")
    if not 0 <= i_star < dim or not 0 <= j_star < dim:
        raise ValueError("channel indices out of range")
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")

    def production(y):
        p = np.zeros((dim, dim))
        p[j_star, i_star] = mu * y[i_star]
        return p

    def destruction(y):
        d = np.zeros((dim, dim))
        d[i_star, j_star] = mu * y[i_star]
        return d

    def analytic(t):
        y = np.ones(dim)
        decay = math.exp(-mu * t)
        y[i_star] = decay
        y[j_star] = 2.0 - decay
        return y

    return PDSProblem(dim=dim, production=production, destruction=destruction,
                      y0=np.ones(dim), horizon=horizon, analytic=analytic,
                      label="appendix")


PROBLEM_NAMES = ("linear", "algal", "brusselator", "saceirqd", "diffusion",
                 "appendix")

#: Constant by which published convergence tables scale the h column for
#: display; recorded as CSV metadata, never applied to the grid itself.
H_LABEL_SCALE = {
    "linear": 1.0,
    "algal": 1.07,
    "brusselator": 0.80,
    "saceirqd": 0.35,
    "diffusion": 1.0,
    "appendix": 1.0,
}


def make_problem(name: str, nx: Optional[int] = None,
                 floor: float = REALMIN,
                 profile: str = "constant") -> PDSProblem:
    """Instantiate a built-in problem by name."""
    if name == "linear":
        return linear_test()
    if name == "algal":
        return algal_bloom()
    if name == "brusselator":
        return brusselator(floor=floor)
    if name == "saceirqd":
        return saceirqd(floor=floor)
    if name == "diffusion":
        profiles = {"constant": constant_profile, "bump": bump_profile}
        if profile not in profiles:
            raise ValueError(f"unknown profile {profile!r}; "
                             f"choose from {sorted(profiles)}")
        grid = DiffusionGrid(nx=nx or 200, profile=profiles[profile])
        return diffusion_fv(grid)
    if name == "appendix":
        return appendix_pds()
    raise ValueError(
        f"unknown problem {name!r}; available: {', '.join(PROBLEM_NAMES)}")


def sample_positive_states(problem: PDSProblem, count: int,
                           seed: int = 0) -> list:
    """Deterministic positive sample states scaled from y0, for structural
    validation sweeps."""
    rng = np.random.default_rng(seed)
    return [problem.y0 * rng.uniform(0.5, 1.5, problem.dim)
            for _ in range(count)]
