"""Parabolic space-time windows, geometric scale sequences, and grids.

The geometry is anisotropic with exponents (4, 2): a window at scale r
covers times 0 <= t <= r^4 and the arc [0, r^2] on the unit circle.  The
scan normalizer f(r) = r * (log log(1/r))^(-1/6) requires r < 1/e so that
log log(1/r) stays positive.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass

E_INV = math.exp(-1.0)

MAX_CELLS_ENV = "CHUNG_LAB_MAX_CELLS"
DEFAULT_MAX_CELLS = 1 << 29

# minimum grid nodes per window axis
MIN_POINTS_PER_AXIS = 16

# slack for index arithmetic on exactly-representable window edges
_EDGE_TOL = 1e-9


class BudgetError(RuntimeError):
    """A requested grid or array exceeds the configured cell budget."""


def cell_budget(override: int | None = None) -> int:
    """Maximum number of space-time cells (nx*nt) a single field may use.

    Resolution order: explicit ``override``, the ``CHUNG_LAB_MAX_CELLS``
    environment variable, then the built-in default.
    """
    if override is not None:
        return int(override)
    env = os.environ.get(MAX_CELLS_ENV)
    if env is not None:
        return int(env)
    return DEFAULT_MAX_CELLS


def chung_normalizer(r: float) -> float:
    """Scan normalizer f(r) = r * (log log(1/r))^(-1/6), for 0 < r < 1/e."""
    if not 0.0 < r < E_INV:
        raise ValueError(f"normalizer needs 0 < r < 1/e, got r={r!r}")
    return r * math.log(math.log(1.0 / r)) ** (-1.0 / 6.0)


@dataclass(frozen=True)
class ParabolicWindow:
    """Space-time window at scale r: times [0, r^4], arc [0, r^2].

    Extents are always recomputed from r, never stored.
    """

    r: float

    def __post_init__(self):
        if not 0.0 < self.r < E_INV:
            raise ValueError(f"window scale must satisfy 0 < r < 1/e, got {self.r!r}")

    @property
    def t_max(self) -> float:
        return self.r**4

    @property
    def x_max(self) -> float:
        return self.r**2

    @property
    def normalizer(self) -> float:
        return chung_normalizer(self.r)


@dataclass(frozen=True)
class ScaleParams:
    """Geometric scale sequence r_n = a^(-n) for n in [n_min, n_max].

    epsilon is the freezing exponent used by the coupling experiments;
    it must lie strictly inside (0, 1).
    """

    a: float
    n_min: int
    n_max: int
    epsilon: float = 0.5

    def __post_init__(self):
        if not self.a > 1.0:
            raise ValueError(f"scale ratio must exceed 1, got a={self.a!r}")
        if self.n_min < 1:
            raise ValueError(f"n_min must be >= 1, got {self.n_min}")
        if self.n_max < self.n_min:
            raise ValueError(f"need n_max >= n_min, got [{self.n_min}, {self.n_max}]")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon!r}")

    def r(self, n: int) -> float:
        return self.a ** (-n)

    def indices(self) -> range:
        return range(self.n_min, self.n_max + 1)


def scale_sequence(params: ScaleParams) -> list[ParabolicWindow]:
    """Windows for r_n = a^(-n), n = n_min..n_max, in decreasing r order.

    Indices whose r_n is not strictly below 1/e are rejected: they are
    reported through a warning and omitted from the output rather than
    silently dropped.
    """
    windows = []
    rejected = []
    for n in params.indices():
        r = params.r(n)
        if r >= E_INV:
            rejected.append((n, r))
        else:
            windows.append(ParabolicWindow(r))
    if rejected:
        detail = ", ".join(f"n={n} (r={r:.6g})" for n, r in rejected)
        warnings.warn(f"rejected scale indices with r >= 1/e: {detail}", stacklevel=2)
    return windows


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the unit circle: nx cells of width dx = 1/nx, nt time
    steps of size dt.  Spatial positions are x_i = i/nx (dx*nx = 1 holds by
    representation: only nx is stored, dx is derived).
    """

    nx: int
    nt: int
    dt: float

    def __post_init__(self):
        if self.nx < 4:
            raise ValueError(f"need nx >= 4, got {self.nx}")
        if self.nt < 1:
            raise ValueError(f"need nt >= 1, got {self.nt}")
        if not self.dt > 0.0:
            raise ValueError(f"need dt > 0, got {self.dt!r}")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def horizon(self) -> float:
        return self.nt * self.dt

    @property
    def cells(self) -> int:
        return self.nx * self.nt

    @property
    def cell_std(self) -> float:
        """Standard deviation of one white-noise cell increment."""
        return math.sqrt(self.dt / self.nx)

    def resolves(self, window: ParabolicWindow) -> bool:
        """Window resolution contract: at least MIN_POINTS_PER_AXIS cells per
        window axis and a horizon covering the window."""
        ok_x = self.nx * window.x_max >= MIN_POINTS_PER_AXIS * (1.0 - _EDGE_TOL)
        ok_t = window.t_max / self.dt >= MIN_POINTS_PER_AXIS * (1.0 - _EDGE_TOL)
        ok_h = self.horizon >= window.t_max * (1.0 - _EDGE_TOL)
        return ok_x and ok_t and ok_h

    def require_resolves(self, window: ParabolicWindow) -> None:
        if not self.resolves(window):
            raise ValueError(
                f"grid (nx={self.nx}, nt={self.nt}, dt={self.dt:g}) does not "
                f"resolve window r={window.r:g} "
                f"(x_max={window.x_max:g}, t_max={window.t_max:g})"
            )

    def window_x_index(self, window: ParabolicWindow) -> int:
        """Largest spatial index i with x_i = i/nx <= x_max (inclusive edge)."""
        return min(self.nx - 1, int(math.floor(self.nx * window.x_max + _EDGE_TOL)))

    def window_t_index(self, window: ParabolicWindow) -> int:
        """Largest time row j with j*dt <= t_max (inclusive edge)."""
        return min(self.nt, int(math.floor(window.t_max / self.dt + _EDGE_TOL)))


def window_grid(
    window: ParabolicWindow,
    points_per_axis: int = MIN_POINTS_PER_AXIS,
    resolution: int = 1,
    time_rule: str = "dx2",
    max_cells: int | None = None,
) -> GridSpec:
    """Grid resolving the window with >= points_per_axis*resolution cells per
    window axis.  The window arc [0, x_max] maps onto spatial indices
    0..window_x_index.

    time_rule selects the step size:
      * ``"dx2"``  -- diffusive default dt = dx^2/2 (finite-difference runs);
      * ``"axis"`` -- dt = t_max / (points_per_axis*resolution), the coarsest
        step honoring the node contract (exact-in-law spectral sampling).

    Integer ``resolution`` multiplies the base node count on both axes so
    that refined grids share nodes with their parents.
    """
    if points_per_axis < MIN_POINTS_PER_AXIS:
        raise ValueError(f"points_per_axis must be >= {MIN_POINTS_PER_AXIS}")
    if resolution < 1:
        raise ValueError(f"resolution must be a positive integer, got {resolution}")
    nx = resolution * math.ceil(points_per_axis / window.x_max - _EDGE_TOL)
    if time_rule == "dx2":
        dt = 1.0 / (2.0 * nx * nx)
        nt = math.ceil(window.t_max / dt - _EDGE_TOL)
    elif time_rule == "axis":
        nt = points_per_axis * resolution
        dt = window.t_max / nt
    else:
        raise ValueError(f"unknown time_rule {time_rule!r}")
    budget = cell_budget(max_cells)
    if nx * nt > budget:
        raise BudgetError(
            f"window r={window.r:g} needs {nx}x{nt} = {nx * nt} cells, "
            f"budget is {budget} (raise {MAX_CELLS_ENV} to override)"
        )
    return GridSpec(nx=nx, nt=nt, dt=dt)
