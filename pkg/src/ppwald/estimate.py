"""Generalised Wald estimation of the average causal effect rate (ACER).

The intention-to-treat curves ``f`` (treatment) and ``h`` (outcome) satisfy
``h = -ACER * f`` under the identification conditions. The ACER is expanded
in a clamped B-spline basis and the coefficients solve the ridge problem

    min_beta || h + sum_j (psi_j * f) beta_j ||^2 + eta ||beta||^2

with the norm discretised so that it approximates the L2 norm on [0, T].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from .core import Curve, TimeGrid, convolve, stack, step_curve
from .simulate import Dataset, make_rng


class IllPosedError(ValueError):
    pass


class MissingLevelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ITT curves

def _arm(data: Dataset, level: int):
    trials = data.arm(level)
    if not trials:
        raise MissingLevelError(f"no trials at instrument level {level}")
    return trials


def itt_curves(data: Dataset, grid: TimeGrid, level_hi: int = 1,
               level_lo: int = 0) -> tuple[Curve, Curve]:
    """Differences in mean cumulative counts between two instrument levels.

    Returns ``(f_hat, h_hat)`` for the treatment and outcome processes.
    """
    hi = _arm(data, level_hi)
    lo = _arm(data, level_lo)
    f_hat = step_curve([tr.n_events for tr in hi], grid) - step_curve([tr.n_events for tr in lo], grid)
    h_hat = step_curve([tr.y_events for tr in hi], grid) - step_curve([tr.y_events for tr in lo], grid)
    return f_hat, h_hat


def wald_binary(mean_y1: float, mean_y0: float, mean_n1: float, mean_n0: float) -> float:
    """Classical Wald ratio for a binary instrument."""
    denom = mean_n1 - mean_n0
    if denom == 0:
        raise ZeroDivisionError("weak/null instrument: treatment means are equal")
    return (mean_y1 - mean_y0) / denom


# ---------------------------------------------------------------------------
# Basis

@dataclass(frozen=True)
class BasisSpec:
    degree: int = 3
    num_interior_knots: int = 6
    support: float = 1.0

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if self.num_interior_knots < 0:
            raise ValueError("num_interior_knots must be nonnegative")
        if not self.support > 0:
            raise ValueError("support must be positive")

    @property
    def size(self) -> int:
        return self.num_interior_knots + self.degree + 1

    @property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, self.support, self.num_interior_knots + 2)

    @property
    def knots(self) -> np.ndarray:
        """Clamped (open-uniform) knot vector on ``[0, support]``."""
        p = self.degree
        return np.concatenate(([0.0] * p, self.breakpoints, [self.support] * p))

    def to_dict(self) -> dict:
        return {"degree": self.degree, "num_interior_knots": self.num_interior_knots,
                "support": self.support}


def basis_matrix(spec: BasisSpec, grid: TimeGrid) -> np.ndarray:
    """Basis functions evaluated on the grid, one column per function."""
    dt = grid.dt
    if spec.support <= spec.degree * dt:
        raise ValueError("support too small for basis")
    if spec.support > grid.end + 1e-9 or grid.t0 > 1e-9:
        raise ValueError(f"support [0, {spec.support}] not within grid [{grid.t0}, {grid.end}]")
    t = grid.times
    inside = (t >= 0) & (t <= spec.support + 1e-12)
    out = np.zeros((grid.n, spec.size))
    x = np.clip(t[inside], 0.0, spec.support)
    out[inside] = BSpline.design_matrix(x, spec.knots, spec.degree).toarray()
    return out


def bspline_basis(spec: BasisSpec, grid: TimeGrid) -> list[Curve]:
    mat = basis_matrix(spec, grid)
    return [Curve(grid, mat[:, j]) for j in range(spec.size)]


def design_matrix(basis: Sequence[Curve], f_hat: Curve) -> np.ndarray:
    """Columns ``psi_j * f_hat`` scaled by sqrt(dt)."""
    cols = [convolve(psi, f_hat) for psi in basis]
    return stack(cols) * np.sqrt(f_hat.grid.dt)


# ---------------------------------------------------------------------------
# Ridge fit

@dataclass(frozen=True, eq=False)
class AcerFit:
    beta: np.ndarray
    basis: BasisSpec
    eta: float
    acer: Curve
    design_condition: float
    method: str = "ridge"
    intercept: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def curve_name(self) -> str:
        """``g`` for the observational kernel (which is -ACER), else ``acer``."""
        return "g" if self.method == "observational" else "acer"

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "beta": [float(b) for b in self.beta],
            "knots": [float(k) for k in self.basis.knots],
            "degree": self.basis.degree,
            "eta": float(self.eta),
            "support": [0.0, float(self.basis.support)],
            "grid": self.acer.grid.as_dict(),
            self.curve_name: [float(v) for v in self.acer.values],
            "design_condition": float(self.design_condition),
        }
        if self.intercept is not None:
            out["intercept"] = float(self.intercept)
        if self.metadata:
            out["metadata"] = self.metadata
        return out


def _ridge_solve(A: np.ndarray, y: np.ndarray, eta: float) -> tuple[np.ndarray, float]:
    """Solve (A'A + eta I) x = A'y by Cholesky; returns x and the condition number."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    normal = A.T @ A + eta * np.eye(A.shape[1])
    cond = float(np.linalg.cond(normal))
    if eta == 0 and not cond < 1.0 / np.finfo(float).eps:
        raise IllPosedError("ill-posed: increase eta or reduce J")
    try:
        factor = linalg.cho_factor(normal)
    except linalg.LinAlgError:
        raise IllPosedError("ill-posed: increase eta or reduce J") from None
    return linalg.cho_solve(factor, A.T @ y), cond


def fit_acer(f_hat: Curve, h_hat: Curve, spec: BasisSpec, eta: float) -> AcerFit:
    """Penalised least-squares deconvolution of ``h_hat = -ACER * f_hat``."""
    f_hat._check(h_hat)
    basis = basis_matrix(spec, f_hat.grid)
    A = design_matrix([Curve(f_hat.grid, basis[:, j]) for j in range(spec.size)], f_hat)
    y = h_hat.values * np.sqrt(f_hat.grid.dt)
    coef, cond = _ridge_solve(A, y, eta)
    beta = -coef
    return AcerFit(beta, spec, float(eta), Curve(f_hat.grid, basis @ beta), cond)


def validation_loss(fit: AcerFit, f_val: Curve, h_val: Curve) -> float:
    """Discretised ``|| h + sum_j (psi_j * f) beta_j ||^2`` on held-out curves."""
    fitted = convolve(fit.acer, f_val)
    resid = h_val.values + fitted.values
    return float(f_val.grid.dt * resid @ resid)


def _stratified_folds(data: Dataset, levels: Sequence[int], folds: int, seed) -> list[np.ndarray]:
    if folds < 2:
        raise ValueError("need at least 2 folds")
    rng = make_rng(seed)
    assignment = np.full(len(data), -1)
    for level in levels:
        idx = np.array([i for i, tr in enumerate(data.trials) if tr.z == level])
        if idx.size < folds:
            raise ValueError(
                f"cannot stratify: {idx.size} trials at level {level} for {folds} folds")
        perm = rng.permutation(idx.size)
        assignment[idx[perm]] = np.arange(idx.size) % folds
    return [np.flatnonzero(assignment == k) for k in range(folds)]


def cross_validate(data: Dataset, grid: TimeGrid, spec_candidates: Sequence[BasisSpec],
                   eta: float, folds: int = 5, seed=0, level_hi: int = 1,
                   level_lo: int = 0, return_scores: bool = False):
    """Choose a basis by K-fold CV stratified on the instrument level.

    Both ITT curves are rebuilt from the validation trials of each fold.
    Near-ties go to the candidate with fewer interior knots.
    """
    candidates = list(spec_candidates)
    if not candidates:
        raise ValueError("no candidate bases")
    parts = _stratified_folds(data, (level_hi, level_lo), folds, seed)
    if len(candidates) == 1:
        return (candidates[0], None) if return_scores else candidates[0]
    scores = np.zeros((len(candidates), folds))
    everything = np.arange(len(data))
    for k, val_idx in enumerate(parts):
        train = data.subset(np.setdiff1d(everything, val_idx))
        val = data.subset(val_idx)
        f_tr, h_tr = itt_curves(train, grid, level_hi, level_lo)
        f_va, h_va = itt_curves(val, grid, level_hi, level_lo)
        for c, spec in enumerate(candidates):
            scores[c, k] = validation_loss(fit_acer(f_tr, h_tr, spec, eta), f_va, h_va)
    mean = scores.mean(axis=1)
    best = mean.min()
    tied = [c for c in range(len(candidates)) if np.isclose(mean[c], best, rtol=1e-9, atol=0)]
    choice = min(tied, key=lambda c: (candidates[c].num_interior_knots, c))
    return (candidates[choice], mean) if return_scores else candidates[choice]


# ---------------------------------------------------------------------------
# Observational comparator

def pooled_curves(data: Dataset, grid: TimeGrid) -> tuple[Curve, Curve]:
    """Mean cumulative treatment and outcome counts over all trials."""
    return (step_curve([tr.n_events for tr in data.trials], grid),
            step_curve([tr.y_events for tr in data.trials], grid))


def fit_observational(data: Dataset, grid: TimeGrid, spec: BasisSpec, eta: float) -> AcerFit:
    """Regress pooled outcome counts on ``mu * t + g * f`` ignoring the instrument.

    The returned ``acer`` curve holds the fitted effect kernel ``g`` and
    ``intercept`` the baseline rate ``mu``. Under no confounding, ``g``
    corresponds to ``-ACER``.
    """
    f_pool, h_pool = pooled_curves(data, grid)
    basis = basis_matrix(spec, grid)
    A = design_matrix([Curve(grid, basis[:, j]) for j in range(spec.size)], f_pool)
    sq = np.sqrt(grid.dt)
    A = np.column_stack([A, grid.times * sq])
    coef, cond = _ridge_solve(A, h_pool.values * sq, eta)
    beta, mu = coef[:-1], float(coef[-1])
    return AcerFit(beta, spec, float(eta), Curve(grid, basis @ beta), cond,
                   method="observational", intercept=mu)


# ---------------------------------------------------------------------------
# Pipeline configuration

@dataclass(frozen=True)
class EstimationConfig:
    """Everything needed to refit the estimator on a resampled dataset."""

    spec: BasisSpec = field(default_factory=BasisSpec)
    eta: float | None = None  # None means 1/m
    grid: TimeGrid = field(default_factory=TimeGrid.covering)
    level_hi: int = 1
    level_lo: int = 0

    def penalty(self, m: int) -> float:
        return 1.0 / m if self.eta is None else float(self.eta)

    def fit(self, data: Dataset) -> AcerFit:
        f_hat, h_hat = itt_curves(data, self.grid, self.level_hi, self.level_lo)
        return fit_acer(f_hat, h_hat, self.spec, self.penalty(len(data)))
