"""Bootstrap confidence bands and the monotonicity diagnostic."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import Curve, TimeGrid, _counts_on_grid
from .estimate import EstimationConfig, MissingLevelError, basis_matrix, design_matrix, _ridge_solve
from .simulate import Dataset, make_rng

SIGMA_FLOOR = 1e-12


class DegenerateBootstrap(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConfidenceBand:
    center: Curve
    lower: Curve
    upper: Curve
    alpha: float
    q_alpha: float
    b_reps: int
    sigma: Curve
    band_scale: str = "paper"
    m: int = 0

    @property
    def width(self) -> np.ndarray:
        return self.upper.values - self.lower.values

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta", "center", "lower", "upper"])
        for row in zip(self.center.times, self.center.values, self.lower.values, self.upper.values):
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "q_alpha": self.q_alpha, "b_reps": self.b_reps,
                "band_scale": self.band_scale, "m": self.m, "grid": self.center.grid.as_dict()}


def _canonical_arm(data: Dataset, level: int) -> list:
    trials = data.arm(level)
    if not trials:
        raise MissingLevelError(f"no trials at instrument level {level}")
    # order by content so the resampling does not depend on input order
    return sorted(trials, key=lambda tr: (tuple(tr.n_events), tuple(tr.y_events)))


def _count_matrix(trials, grid: TimeGrid, stream: str) -> np.ndarray:
    t = grid.times
    return np.array([_counts_on_grid(getattr(tr, stream), t) for tr in trials], dtype=float)


class _ArmCounts:
    """Per-trial counting paths of one arm so resampled means are cheap."""

    def __init__(self, trials, grid: TimeGrid):
        self.n = _count_matrix(trials, grid, "n_events")
        self.y = _count_matrix(trials, grid, "y_events")
        self.size = len(trials)

    def means(self, idx=None):
        if idx is None:
            return self.n.mean(axis=0), self.y.mean(axis=0)
        return self.n[idx].mean(axis=0), self.y[idx].mean(axis=0)


def bootstrap_band(data: Dataset, fit_config: EstimationConfig, b_reps: int = 500,
                   alpha: float = 0.1, seed=0, band_scale: str = "paper") -> ConfidenceBand:
    """Simultaneous band for the ridge ACER estimate from a within-arm bootstrap.

    Basis and penalty stay fixed across replicates. The band is
    ``g_hat +/- q * s * sigma(t)`` where ``sigma`` is the pointwise bootstrap
    standard deviation, ``q`` the ``1 - alpha`` quantile of the studentised
    sup statistic and ``s = m**-0.5`` (``band_scale="paper"``) or 1 (``"plain"``).
    """
    if b_reps < 100:
        raise ValueError("b_reps must be at least 100")
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if band_scale not in ("paper", "plain"):
        raise ValueError(f"band_scale must be 'paper' or 'plain', got {band_scale!r}")
    grid = fit_config.grid
    hi = _ArmCounts(_canonical_arm(data, fit_config.level_hi), grid)
    lo = _ArmCounts(_canonical_arm(data, fit_config.level_lo), grid)
    m = len(data)
    eta = fit_config.penalty(m)
    spec = fit_config.spec
    basis = basis_matrix(spec, grid)
    basis_curves = [Curve(grid, basis[:, j]) for j in range(spec.size)]
    sq = np.sqrt(grid.dt)

    def estimate(idx_hi, idx_lo):
        n1, y1 = hi.means(idx_hi)
        n0, y0 = lo.means(idx_lo)
        f_hat = Curve(grid, n1 - n0)
        A = design_matrix(basis_curves, f_hat)
        coef, _ = _ridge_solve(A, (y1 - y0) * sq, eta)
        return basis @ -coef

    center = estimate(None, None)
    reps = np.empty((b_reps, grid.n))
    for b in range(b_reps):
        rng = make_rng([int(seed), b])
        reps[b] = estimate(rng.integers(0, hi.size, hi.size), rng.integers(0, lo.size, lo.size))
    mean = reps.mean(axis=0)
    sigma = reps.std(axis=0, ddof=1)
    if not np.any(sigma > SIGMA_FLOOR):
        raise DegenerateBootstrap("degenerate bootstrap: every replicate gave the same estimate")
    stud = np.abs(reps - mean) / np.maximum(sigma, SIGMA_FLOOR)
    q_stat = stud.max(axis=1)
    q_alpha = float(np.quantile(q_stat, 1.0 - alpha))
    scale = m ** -0.5 if band_scale == "paper" else 1.0
    half = q_alpha * scale * sigma
    return ConfidenceBand(Curve(grid, center), Curve(grid, center - half), Curve(grid, center + half),
                          float(alpha), q_alpha, int(b_reps), Curve(grid, sigma), band_scale, m)


# ---------------------------------------------------------------------------
# Monotonicity

@dataclass(frozen=True, eq=False)
class MonotonicityReport:
    survival_hi: Curve
    survival_lo: Curve
    max_violation: float
    violation_times: list

    def to_dict(self) -> dict:
        return {"max_violation": self.max_violation,
                "violation_times": [float(t) for t in self.violation_times],
                "grid": self.survival_hi.grid.as_dict()}

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "survival_hi", "survival_lo"])
        for row in zip(self.survival_hi.times, self.survival_hi.values, self.survival_lo.values):
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()


def _first_times(trials) -> np.ndarray:
    # no event in [0, T] counts as an event after T
    return np.array([tr.n_events.first if len(tr.n_events) else np.inf for tr in trials])


def _survival(first: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Empirical P(first event > tau)."""
    srt = np.sort(first)
    return 1.0 - np.searchsorted(srt, tau, side="right") / srt.size


def monotonicity_check(data: Dataset, grid: TimeGrid | None = None, level_hi: int = 1,
                       level_lo: int = 0) -> MonotonicityReport:
    """Compare survival of the first treatment event between instrument arms.

    Under monotonicity the high arm is stochastically earlier, i.e.
    ``P(T > tau | hi) <= P(T > tau | lo)`` for every tau; the report gives
    the largest positive excess and the times where it is attained.
    """
    grid = grid or TimeGrid.covering(data.horizon)
    hi = data.arm(level_hi)
    lo = data.arm(level_lo)
    if not hi:
        raise MissingLevelError(f"no trials at instrument level {level_hi}")
    if not lo:
        raise MissingLevelError(f"no trials at instrument level {level_lo}")
    f_hi, f_lo = _first_times(hi), _first_times(lo)
    jumps = np.concatenate([f_hi, f_lo])
    jumps = jumps[np.isfinite(jumps)]
    pts = np.union1d(grid.times, jumps[(jumps >= grid.t0) & (jumps <= grid.end)])
    excess = np.clip(_survival(f_hi, pts) - _survival(f_lo, pts), 0.0, None)
    worst = float(excess.max())
    times = pts[excess >= worst - 1e-12].tolist() if worst > 0 else []
    return MonotonicityReport(Curve(grid, _survival(f_hi, grid.times)),
                              Curve(grid, _survival(f_lo, grid.times)), worst, times)
