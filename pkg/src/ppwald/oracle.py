"""Ground-truth ACER curves and error metrics.

Closed forms cover the linear Hawkes outcome and the nonlinear outcome with
additive confounding. Non-additive confounding (cubic link around the
confounder) has no closed form; its ACER surface is computed by Monte Carlo
over confounder paths.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import Curve, EventTimes, TimeGrid, integrate
from .simulate import (ScenarioConfig, alpha_fn, confounder_grid, make_rng, power_link,
                       sample_gp_paths)


def alpha_derivative(t, a: float, b: float):
    """d/dt of the alpha function: b a^2 (1 - a t) exp(-a t) for t > 0."""
    t = np.asarray(t, dtype=float)
    pos = np.clip(t, 0.0, None)
    out = np.where(t > 0, b * a * a * (1.0 - a * pos) * np.exp(-a * pos), 0.0)
    return out if out.ndim else float(out)


def alpha_integral(t, a: float, b: float):
    """int_0^t alpha(s; a, b) ds."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, None)
    out = b * (1.0 - np.exp(-a * t) * (1.0 + a * t))
    return out if out.ndim else float(out)


def true_acer_linear(g: Curve) -> Curve:
    """ACER(Delta; 0) = -g(Delta) for a linear outcome without self-excitation."""
    return -g


def true_acer_model2(mu_y: float, beta1: int, g: Curve) -> Curve:
    """phi(mu_Y) - phi(mu_Y + g(Delta)) with phi(x) = x**beta1."""
    if beta1 == 1:
        return true_acer_linear(g)
    vals = power_link(mu_y, beta1) - power_link(mu_y + g.values, beta1)
    return Curve(g.grid, vals)


def scenario_truth(cfg: ScenarioConfig, grid: TimeGrid) -> Curve:
    """True ACER(Delta; 0) used to score estimates in scenarios 1a-2b."""
    g = Curve(grid, alpha_fn(grid.times, cfg.a_y, cfg.b_y))
    if cfg.beta2 != 1:
        raise ValueError("no closed form for non-additive confounding; use mc_acer_scenario3")
    if cfg.beta1 == 1:
        return true_acer_linear(g)
    return true_acer_model2(cfg.mu_y, cfg.beta1, g)


def criterion_r(estimate: Curve, truth: Curve, support=(0.0, 1.0)) -> float:
    """Integrated squared error over ``support`` relative to the integrated squared truth."""
    estimate._check(truth)
    lo, hi = support
    denom = integrate(Curve(truth.grid, truth.values ** 2), lo, hi)
    if denom == 0:
        raise ZeroDivisionError("null truth: ACER is identically zero on the support")
    return integrate(Curve(truth.grid, (estimate.values - truth.values) ** 2), lo, hi) / denom


def multi_event_ace(acer: Curve, n_path: EventTimes, n_path_alt: EventTimes, t: float) -> float:
    """ACE of treatment path ``n_path`` versus ``n_path_alt`` on the outcome count at ``t``.

    ``-int_0^t ACER(t - tau) {n(tau) - n'(tau)} dtau``, evaluated event by
    event as ``-sum_k int_0^{t - tau_k} ACER`` with ACER(Delta; 0) given on a
    grid starting at 0.
    """
    grid = acer.grid
    if abs(grid.t0) > 1e-9:
        raise ValueError("ACER curve must be indexed by lag from 0")
    if t < -1e-9 or t > grid.end + 1e-9:
        raise ValueError(f"t={t} outside grid [{grid.t0}, {grid.end}]")

    def total(path: EventTimes) -> float:
        return sum(integrate(acer, 0.0, min(t - tau, grid.end)) for tau in path.times if tau <= t)

    return -(total(n_path) - total(n_path_alt))


# ---------------------------------------------------------------------------
# Forward-model oracles (no confounding, identity links)

def _require_linear_unconfounded(cfg: ScenarioConfig):
    if cfg.kernel.sigma != 0 or (cfg.beta0, cfg.beta1, cfg.beta2) != (1, 1, 1):
        raise ValueError("analytic moments need sigma_U = 0 and identity links")


def treatment_mean(cfg: ScenarioConfig, z: int, t) -> np.ndarray:
    """E{N(t) | Z = z} without confounding."""
    _require_linear_unconfounded(cfg)
    t = np.asarray(t, dtype=float)
    cum = cfg.mu_n * t + z * alpha_integral(t, cfg.a_n, cfg.b_n)
    if cfg.single_point:
        return 1.0 - np.exp(-cum)
    return cum


def analytic_itt_treatment(cfg: ScenarioConfig, grid: TimeGrid) -> Curve:
    t = grid.times
    return Curve(grid, treatment_mean(cfg, 1, t) - treatment_mean(cfg, 0, t))


def expected_outcome_count(cfg: ScenarioConfig, z: int, t: float, step: float = 1e-4) -> float:
    """E{Y(t) | Z = z} = mu_Y t + int_0^t A(t - s) dE{N(s)}, A the integrated kernel."""
    _require_linear_unconfounded(cfg)
    s = np.linspace(0.0, t, int(np.ceil(t / step)) + 1)
    density = np.gradient(treatment_mean(cfg, z, s), s)
    return cfg.mu_y * t + float(np.trapezoid(density * alpha_integral(t - s, cfg.a_y, cfg.b_y), s))


# ---------------------------------------------------------------------------
# Monte Carlo ACER under non-additive confounding

@dataclass(frozen=True, eq=False)
class AcerSurface:
    tau_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray  # shape (len(tau_grid), len(t_grid))
    mc_se: np.ndarray
    n_mc: int = 0
    # ACER(t; tau) - ACER(t - tau; 0) estimated path by path, with its standard error
    shift_dev: np.ndarray | None = None
    shift_se: np.ndarray | None = None

    def at(self, tau: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.tau_grid - tau)))
        if abs(self.tau_grid[k] - tau) > 1e-9:
            raise KeyError(f"tau={tau} not in surface")
        return self.values[k]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "tau", "acer", "mc_se"])
        for i, tau in enumerate(self.tau_grid):
            for j, t in enumerate(self.t_grid):
                w.writerow([f"{t:.17g}", f"{tau:.17g}", f"{self.values[i, j]:.17g}",
                            f"{self.mc_se[i, j]:.17g}"])
        return buf.getvalue()


def _cumtrapz(y: np.ndarray, dx: float) -> np.ndarray:
    out = np.zeros_like(y)
    out[..., 1:] = np.cumsum(0.5 * dx * (y[..., 1:] + y[..., :-1]), axis=-1)
    return out


def mc_acer_scenario3(cfg: ScenarioConfig, tau_grid, t_grid: TimeGrid, n_mc: int = 100_000,
                      seed=0, chunk: int = 2_000, min_draws: int = 1000) -> AcerSurface:
    """Monte Carlo ACER(t; tau) for an outcome intensity (mu_Y + g(t - tau) + U(t - d_U))**beta2.

    ``ACER(t; tau) = int_0^t E[ dg(s - tau)/dtau * beta2 * (mu_Y + g(s - tau) + U(s - d_U))^(beta2 - 1) ] ds``
    with ``g = alpha(.; a_Y, b_Y)``, averaged over ``n_mc`` confounder paths.
    Standard errors come from the spread of the per-path integrals.
    """
    if cfg.beta2 < 2:
        raise ValueError("use closed form instead: beta2 < 2 gives additive confounding")
    if cfg.beta0 != 1 or cfg.beta1 != 1:
        raise ValueError("Monte Carlo oracle expects beta0 = beta1 = 1")
    if n_mc < min_draws:
        raise ValueError(f"n_mc must be at least {min_draws}")
    if abs(t_grid.t0) > 1e-12:
        raise ValueError("t grid must start at 0")
    tau_grid = np.asarray(tau_grid, dtype=float)
    s = t_grid.times
    dt = t_grid.dt
    ugrid = confounder_grid(cfg, dt)
    # linear interpolation weights of U at s - d_U, shared by all paths
    pos = (s - cfg.d_u - ugrid.t0) / ugrid.dt
    lo = np.clip(np.floor(pos + 1e-9).astype(int), 0, ugrid.n - 2)
    w = np.clip(pos - lo, 0.0, 1.0)

    p = int(cfg.beta2)
    factors = []
    bases = []
    for tau in tau_grid:
        lag = s - tau
        # d/dtau g(s - tau) = -g'(s - tau)
        factors.append(-alpha_derivative(lag, cfg.a_y, cfg.b_y) * p)
        bases.append(cfg.mu_y + alpha_fn(lag, cfg.a_y, cfg.b_y))
    factors = np.array(factors)
    bases = np.array(bases)

    # rows whose lag shift is a whole number of grid steps get paired
    # per-path comparisons against the tau = 0 row
    zero_row = np.flatnonzero(np.abs(tau_grid) < 1e-12)
    shifts = np.round(tau_grid / dt).astype(int)
    paired = zero_row.size > 0 and np.allclose(shifts * dt, tau_grid, atol=1e-9)

    rng = make_rng(seed)
    # sums are taken around the first chunk's means to avoid cancellation
    centre = None
    dev_centre = None
    total = np.zeros((tau_grid.size, s.size))
    total_sq = np.zeros_like(total)
    dev_sum = np.zeros_like(total)
    dev_sq = np.zeros_like(total)
    done = 0
    while done < n_mc:
        size = min(chunk, n_mc - done)
        paths = sample_gp_paths(cfg.kernel, ugrid, size, rng)
        u = paths[:, lo] * (1 - w) + paths[:, lo + 1] * w
        rows = [_cumtrapz(factors[i] * power_link(bases[i] + u, p - 1), dt)
                for i in range(tau_grid.size)]
        if centre is None:
            centre = np.array([r.mean(axis=0) for r in rows])
        for i, per_path in enumerate(rows):
            x = per_path - centre[i]
            total[i] += x.sum(axis=0)
            total_sq[i] += np.einsum("ij,ij->j", x, x)
        if paired:
            base = rows[zero_row[0]]
            diffs = []
            for i, k in enumerate(shifts):
                shifted = np.zeros_like(base)
                shifted[:, k:] = base[:, : s.size - k]
                diffs.append(rows[i] - shifted)
            if dev_centre is None:
                dev_centre = np.array([d.mean(axis=0) for d in diffs])
            for i, diff in enumerate(diffs):
                x = diff - dev_centre[i]
                dev_sum[i] += x.sum(axis=0)
                dev_sq[i] += np.einsum("ij,ij->j", x, x)
        done += size
    mean, se = _mean_se(total, total_sq, n_mc)
    mean += centre
    later = s[None, :] > tau_grid[:, None]
    mean[~later] = 0.0
    se[~later] = 0.0
    shift_dev = shift_se = None
    if paired:
        shift_dev, shift_se = _mean_se(dev_sum, dev_sq, n_mc)
        shift_dev += dev_centre
    return AcerSurface(tau_grid, s.copy(), mean, se, n_mc, shift_dev, shift_se)


def _mean_se(total, total_sq, n):
    mean = total / n
    var = np.clip(total_sq / n - mean ** 2, 0.0, None) * n / max(n - 1, 1)
    return mean, np.sqrt(var / n)


def closed_form_power_surface(cfg: ScenarioConfig, tau_grid, t_grid: TimeGrid) -> np.ndarray:
    """mu_Y^p - (mu_Y + g(t - tau))^p: the unconfounded limit of the Monte Carlo surface."""
    s = t_grid.times
    out = []
    for tau in np.asarray(tau_grid, dtype=float):
        g = alpha_fn(s - tau, cfg.a_y, cfg.b_y)
        out.append(power_link(cfg.mu_y, cfg.beta2) - power_link(cfg.mu_y + g, cfg.beta2))
    return np.array(out)


def shift_deviation(surface: AcerSurface) -> tuple[np.ndarray, np.ndarray]:
    """|ACER(t; tau) - ACER(t - tau; 0)| and its Monte Carlo standard error.

    Uses the paired per-path estimate when the surface carries one;
    otherwise the two standard errors are combined as if independent.
    """
    if surface.shift_dev is not None:
        return np.abs(surface.shift_dev), surface.shift_se
    base = surface.at(0.0)
    base_se = surface.mc_se[int(np.argmin(np.abs(surface.tau_grid)))]
    t = surface.t_grid
    dev = np.zeros_like(surface.values)
    se = np.zeros_like(surface.values)
    for i, tau in enumerate(surface.tau_grid):
        shifted = np.interp(t - tau, t, base, left=0.0)
        shifted_se = np.interp(t - tau, t, base_se, left=0.0)
        dev[i] = np.abs(surface.values[i] - shifted)
        se[i] = np.sqrt(surface.mc_se[i] ** 2 + shifted_se ** 2)
    return dev, se


def max_shift_zscore(surface: AcerSurface) -> float:
    """Largest |ACER(t; tau) - ACER(t - tau; 0)| in units of its standard error."""
    dev, se = shift_deviation(surface)
    ok = se > 0
    return float((dev[ok] / se[ok]).max()) if ok.any() else 0.0
