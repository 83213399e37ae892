"""Time grids, counting processes and curve arithmetic.

Everything downstream works on curves sampled on a uniform grid
``t0 + k * dt`` for ``k = 0..n-1``. Curves are immutable; every operation
returns a new one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_DT = 0.005
DEFAULT_HORIZON = 3.0

# tolerance used when matching a time to a grid point
_GRID_EPS = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"grid step must be positive, got {self.dt}")
        if self.n < 2:
            raise ValueError(f"grid needs at least 2 points, got {self.n}")

    @classmethod
    def covering(cls, horizon: float = DEFAULT_HORIZON, dt: float = DEFAULT_DT,
                 t0: float = 0.0) -> "TimeGrid":
        """Grid from ``t0`` to ``horizon`` inclusive with step ``dt``."""
        n = int(round((horizon - t0) / dt)) + 1
        return cls(t0=float(t0), dt=float(dt), n=n)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def end(self) -> float:
        return self.t0 + self.dt * (self.n - 1)

    def index_of(self, t: float) -> int:
        """Index of the grid point equal to ``t`` (to rounding)."""
        k = (t - self.t0) / self.dt
        ik = int(round(k))
        if abs(k - ik) > 1e-6 or not 0 <= ik < self.n:
            raise ValueError(f"time {t} is not a point of {self}")
        return ik

    def as_dict(self) -> dict:
        return {"t0": self.t0, "dt": self.dt, "n": self.n}


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EventTimes:
    """Sorted event times of one realisation of a simple point process."""

    times: np.ndarray = field(default_factory=lambda: _readonly([]))

    def __post_init__(self):
        t = _readonly(np.ravel(self.times))
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("event times must be strictly increasing")
        if not np.all(np.isfinite(t)):
            raise ValueError("event times must be finite")
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return self.times.size

    def __iter__(self):
        return iter(self.times.tolist())

    def __eq__(self, other) -> bool:
        return isinstance(other, EventTimes) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())

    def __repr__(self) -> str:
        return f"EventTimes({self.times.tolist()})"

    @property
    def first(self) -> float | None:
        return float(self.times[0]) if self.times.size else None


@dataclass(frozen=True, eq=False)
class Curve:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = _readonly(self.values)
        if v.shape != (self.grid.n,):
            raise ValueError(f"curve has {v.size} values for a grid of {self.grid.n} points")
        if not np.all(np.isfinite(v)):
            raise ValueError("curve values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: TimeGrid, fn) -> "Curve":
        return cls(grid, fn(grid.times))

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "Curve":
        return cls(grid, np.zeros(grid.n))

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def _check(self, other: "Curve"):
        if self.grid != other.grid:
            raise ValueError(f"curves live on different grids: {self.grid} vs {other.grid}")

    def __add__(self, other):
        if isinstance(other, Curve):
            self._check(other)
            return Curve(self.grid, self.values + other.values)
        return Curve(self.grid, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Curve):
            self._check(other)
            return Curve(self.grid, self.values - other.values)
        return Curve(self.grid, self.values - other)

    def __neg__(self):
        return Curve(self.grid, -self.values)

    def __mul__(self, scalar: float):
        return Curve(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return (isinstance(other, Curve) and self.grid == other.grid
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def __call__(self, t):
        """Linear interpolation between grid points."""
        return np.interp(t, self.grid.times, self.values)


def count_at(events: EventTimes, t: float) -> int:
    """N([0, t]): number of events at or before ``t``."""
    return int(np.searchsorted(events.times, t + _GRID_EPS, side="right"))


def _counts_on_grid(events: EventTimes, times: np.ndarray) -> np.ndarray:
    # events within rounding distance of a grid point count at that point
    return np.searchsorted(events.times, times + _GRID_EPS, side="right")


def step_curve(events_list: Iterable[EventTimes], grid: TimeGrid) -> Curve:
    """Mean counting-process path across trials, sampled on ``grid``."""
    events_list = list(events_list)
    if not events_list:
        raise ValueError("no trials")
    times = grid.times
    total = np.zeros(grid.n)
    for ev in events_list:
        total += _counts_on_grid(ev, times)
    return Curve(grid, total / len(events_list))


def convolve(a: Curve, b: Curve) -> Curve:
    """Causal left-endpoint Riemann convolution ``dt * sum_{j<=k} a_j b_{k-j}``."""
    a._check(b)
    if abs(a.grid.t0) > _GRID_EPS:
        raise ValueError("convolution requires a grid starting at 0")
    n = a.grid.n
    full = np.convolve(a.values, b.values)[:n]
    return Curve(a.grid, a.grid.dt * full)


def convolve_matrix(kernel: np.ndarray, signal: np.ndarray, dt: float) -> np.ndarray:
    """Column-wise causal convolution of each column of ``kernel`` with ``signal``.

    Uses FFT; agrees with :func:`convolve` up to floating-point rounding.
    """
    kernel = np.atleast_2d(np.asarray(kernel, dtype=float))
    n = signal.shape[0]
    size = 1 << int(np.ceil(np.log2(2 * n)))
    fs = np.fft.rfft(signal, size)
    fk = np.fft.rfft(kernel, size, axis=0)
    return dt * np.fft.irfft(fk * fs[:, None], size, axis=0)[:n]


def integrate(c: Curve, lo: float, hi: float) -> float:
    """Trapezoid integral of ``c`` over ``[lo, hi]``.

    Bounds need not be grid points; the curve is linearly interpolated at
    the ends, which keeps the result additive over partitions.
    """
    g = c.grid
    if lo > hi:
        raise ValueError(f"lower bound {lo} exceeds upper bound {hi}")
    if lo < g.t0 - _GRID_EPS or hi > g.end + _GRID_EPS:
        raise ValueError(f"bounds [{lo}, {hi}] outside grid [{g.t0}, {g.end}]")
    if lo == hi:
        return 0.0
    times = g.times
    inner = (times > lo + _GRID_EPS) & (times < hi - _GRID_EPS)
    x = np.concatenate(([lo], times[inner], [hi]))
    y = np.concatenate(([c(lo)], c.values[inner], [c(hi)]))
    return float(np.trapezoid(y, x))


def stack(curves: Sequence[Curve]) -> np.ndarray:
    """Values of several same-grid curves as columns of a matrix."""
    grid = curves[0].grid
    for c in curves[1:]:
        if c.grid != grid:
            raise ValueError("curves live on different grids")
    return np.column_stack([c.values for c in curves])
