"""Confounded treatment/outcome point processes with a binary instrument.

Treatment ``N`` and outcome ``Y`` are driven by conditional intensities

    lam_N(t) = mu_N + phi_b0( alpha(t; a_N, b_N) * z + U(t) )
    lam_Y(t) = phi_b2[ phi_b1( mu_Y + sum_k alpha(t - n_k; a_Y, b_Y) ) + phi_b1( U(t - d_U) ) ]

where ``U`` is a zero-mean Gaussian process with squared-exponential
covariance, ``alpha`` is the alpha function and ``phi_b(x) = x**b``.
Both intensities are clamped at zero before thinning.
"""
from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .core import DEFAULT_DT, Curve, EventTimes, TimeGrid

RNG_NAME = "numpy.random.Philox"


class BoundViolation(RuntimeError):
    """The intensity exceeded the dominating rate used for thinning."""


def make_rng(seed) -> np.random.Generator:
    """Philox generator from an int, a sequence of ints or a SeedSequence.

    Generators are passed through untouched so callers can chain draws.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def alpha_fn(t, a: float, b: float):
    """b * a**2 * t * exp(-a t) for t > 0, zero otherwise."""
    t = np.asarray(t, dtype=float)
    pos = np.clip(t, 0.0, None)
    out = np.where(t > 0, b * a * a * pos * np.exp(-a * pos), 0.0)
    return out if out.ndim else float(out)


def power_link(x, beta):
    """x**beta for a positive integer exponent, by repeated multiplication."""
    if isinstance(beta, bool) or not float(beta).is_integer() or beta < 1:
        raise ValueError(f"unsupported exponent: {beta!r}")
    x = np.asarray(x, dtype=float)
    out = x.copy()
    for _ in range(int(beta) - 1):
        out = out * x
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Gaussian-process confounder

@dataclass(frozen=True)
class GpKernel:
    sigma: float = 0.2
    length_scale: float = 0.1

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")

    def covariance(self, d):
        d = np.asarray(d, dtype=float)
        return self.sigma ** 2 * np.exp(-d * d / (2.0 * self.length_scale ** 2))


@lru_cache(maxsize=16)
def _gp_factor(sigma: float, length_scale: float, t0: float, dt: float, n: int) -> np.ndarray:
    kernel = GpKernel(sigma, length_scale)
    times = t0 + dt * np.arange(n)
    cov = kernel.covariance(times[:, None] - times[None, :])
    var = sigma ** 2
    jitter = 1e-10 * var
    while jitter <= 1e-6 * var * (1 + 1e-9):
        try:
            factor = np.linalg.cholesky(cov + jitter * np.eye(n))
            factor.setflags(write=False)
            return factor
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError(
        f"covariance factorization failed with jitter up to {1e-6 * var:g}")


def sample_gp(kernel: GpKernel, grid: TimeGrid, seed) -> Curve:
    """One draw of the zero-mean GP on ``grid``."""
    if grid.n > 10_000:
        raise ValueError("dense GP sampling is limited to 10^4 grid points")
    rng = make_rng(seed)
    z = rng.standard_normal(grid.n)
    if kernel.sigma == 0:
        return Curve.zeros(grid)
    factor = _gp_factor(kernel.sigma, kernel.length_scale, grid.t0, grid.dt, grid.n)
    return Curve(grid, factor @ z)


def sample_gp_paths(kernel: GpKernel, grid: TimeGrid, count: int, rng) -> np.ndarray:
    """``count`` independent draws as rows of a ``(count, grid.n)`` array."""
    rng = make_rng(rng)
    z = rng.standard_normal((count, grid.n))
    if kernel.sigma == 0:
        return np.zeros_like(z)
    factor = _gp_factor(kernel.sigma, kernel.length_scale, grid.t0, grid.dt, grid.n)
    return z @ factor.T


# ---------------------------------------------------------------------------
# Thinning

Intensity = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class WindowBound:
    """Piecewise-constant dominating rate.

    The rate on each window is the maximum of the intensity on a grid
    ``refine`` times finer than ``resolution``, inflated by ``headroom``.
    Windows are aligned to multiples of ``window``; the first one starts at
    the last accepted event.
    """

    window: float = 0.05
    resolution: float = DEFAULT_DT
    refine: int = 10
    headroom: float = 0.1
    floor: float = 1e-3

    def rates(self, intensity: Intensity, history: np.ndarray, start: float,
              horizon: float) -> tuple[np.ndarray, np.ndarray]:
        first = (np.floor(start / self.window + 1e-9) + 1) * self.window
        edges = np.concatenate(([start], np.arange(first, horizon, self.window), [horizon]))
        edges = edges[np.concatenate(([True], np.diff(edges) > 1e-12))]
        step = self.resolution / self.refine
        per = int(round(self.window / step)) + 1
        # lattice points aligned to the global refined grid, plus both edges
        lo = edges[:-1, None]
        hi = edges[1:, None]
        base = np.floor(lo / step) * step + step * np.arange(per + 1)[None, :]
        pts = np.concatenate([lo, np.clip(base, lo, hi), hi], axis=1)
        lam = intensity(pts.ravel(), history).reshape(pts.shape)
        peak = lam.max(axis=1)
        rate = np.where(peak > 0, peak * (1.0 + self.headroom) + self.floor, 0.0)
        return edges, rate


def thinning(intensity: Intensity, horizon: float, seed, bound: WindowBound | None = None,
             history_dependent: bool = True) -> EventTimes:
    """Ogata thinning of a conditional intensity on ``[0, horizon]``.

    ``intensity(t, history)`` must be vectorised in ``t``; ``history`` holds
    the events accepted so far. When the intensity does not depend on the
    history, all candidates are thinned in a single pass.
    """
    bound = bound or WindowBound()
    rng = make_rng(seed)
    events: list[float] = []
    start = 0.0
    while start < horizon:
        history = np.asarray(events, dtype=float)
        edges, rate = bound.rates(intensity, history, start, horizon)
        widths = np.diff(edges)
        counts = rng.poisson(rate * widths)
        total = int(counts.sum())
        if total == 0:
            break
        cand = np.repeat(edges[:-1], counts) + np.repeat(widths, counts) * rng.random(total)
        cand_rate = np.repeat(rate, counts)
        order = np.argsort(cand, kind="stable")
        cand, cand_rate = cand[order], cand_rate[order]
        lam = np.asarray(intensity(cand, history), dtype=float)
        if np.any(lam > cand_rate * (1 + 1e-12)):
            k = int(np.argmax(lam - cand_rate))
            raise BoundViolation(
                f"bound violated at t={cand[k]:.6f}: intensity {lam[k]:.6g} > rate {cand_rate[k]:.6g}")
        accepted = rng.random(total) * cand_rate < lam
        if events:
            # keeps the process simple if a draw lands exactly on the last event
            accepted &= cand > start
        if not history_dependent:
            events.extend(cand[accepted].tolist())
            break
        idx = np.flatnonzero(accepted)
        if idx.size == 0:
            break
        events.append(float(cand[idx[0]]))
        start = events[-1]
    return EventTimes(np.asarray(events))


# ---------------------------------------------------------------------------
# Scenarios

@dataclass(frozen=True)
class ScenarioConfig:
    mu_n: float = 0.2
    mu_y: float = 0.2
    a_n: float = 10.0
    b_n: float = 0.5
    a_y: float = 8.0
    b_y: float = 1.0
    d_u: float = 0.5
    kernel: GpKernel = field(default_factory=GpKernel)
    beta0: int = 1
    beta1: int = 1
    beta2: int = 1
    single_point: bool = False
    horizon: float = 3.0
    u_start: float = -1.0

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            object.__setattr__(self, "kernel", GpKernel(**self.kernel))
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.u_start > 0:
            raise ValueError("u_start must be <= 0")
        if not (self.a_n > 0 and self.a_y > 0):
            raise ValueError("alpha-kernel rates must be positive")
        if self.u_start > -self.d_u + 1e-12:
            raise ValueError("confounder must start at or before -d_u")
        for b in (self.beta0, self.beta1, self.beta2):
            power_link(1.0, b)

    def replace(self, **changes) -> "ScenarioConfig":
        if "sigma" in changes or "length_scale" in changes:
            kw = dataclasses.asdict(self.kernel)
            for key in ("sigma", "length_scale"):
                if key in changes:
                    kw[key] = changes.pop(key)
            changes["kernel"] = GpKernel(**kw)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown ScenarioConfig fields: {sorted(unknown)}")
        data = dict(data)
        if "kernel" in data:
            kern = dict(data["kernel"])
            extra = set(kern) - {"sigma", "length_scale"}
            if extra:
                raise ValueError(f"unknown kernel fields: {sorted(extra)}")
            data["kernel"] = GpKernel(**kern)
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))


_SCENARIO_EXPONENTS = {
    "1a": dict(beta0=1, beta1=1, beta2=1, single_point=True),
    "1b": dict(beta0=1, beta1=2, beta2=1, single_point=True),
    "2a": dict(beta0=1, beta1=1, beta2=1, single_point=False),
    "2b": dict(beta0=3, beta1=2, beta2=1, single_point=False),
    "3": dict(beta0=1, beta1=1, beta2=3, single_point=False),
}
SCENARIOS = tuple(_SCENARIO_EXPONENTS)


def scenario(name: str, **overrides) -> ScenarioConfig:
    """Preset simulation scenario (1a, 1b, 2a, 2b or 3), with optional overrides."""
    try:
        base = ScenarioConfig(**_SCENARIO_EXPONENTS[str(name)])
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}") from None
    return base.replace(**overrides) if overrides else base


# ---------------------------------------------------------------------------
# Trials and datasets

@dataclass(frozen=True)
class Trial:
    z: int
    n_events: EventTimes
    y_events: EventTimes
    # fraction of grid points where the raw (N, Y) intensity was negative
    clamp_fraction: tuple = field(default=(0.0, 0.0), compare=False)

    def __post_init__(self):
        if int(self.z) != self.z or self.z < 0:
            raise ValueError(f"instrument level must be a nonnegative integer, got {self.z}")
        object.__setattr__(self, "z", int(self.z))
        for name in ("n_events", "y_events"):
            ev = getattr(self, name)
            if not isinstance(ev, EventTimes):
                object.__setattr__(self, name, EventTimes(np.asarray(ev, dtype=float)))


@dataclass(frozen=True)
class Dataset:
    trials: tuple
    horizon: float
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        trials = tuple(self.trials)
        if not trials:
            raise ValueError("dataset has no trials")
        for tr in trials:
            for ev in (tr.n_events, tr.y_events):
                if len(ev) and (ev.times[0] < 0 or ev.times[-1] > self.horizon):
                    raise ValueError("event time outside [0, horizon]")
        object.__setattr__(self, "trials", trials)

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def levels(self) -> list[int]:
        return sorted({tr.z for tr in self.trials})

    def arm(self, z: int) -> list[Trial]:
        return [tr for tr in self.trials if tr.z == z]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.trials[i] for i in indices), self.horizon, dict(self.metadata))


class _TrialIntensities:
    """Intensity evaluators for one trial given its confounder path."""

    def __init__(self, cfg: ScenarioConfig, z: int, u: Curve):
        self.cfg = cfg
        self.z = z
        self._ut = u.grid.times
        self._uv = u.values

    def confounder(self, t):
        return np.interp(t, self._ut, self._uv)

    def treatment_raw(self, t):
        c = self.cfg
        drive = alpha_fn(t, c.a_n, c.b_n) * self.z + self.confounder(t)
        return c.mu_n + power_link(drive, c.beta0)

    def treatment(self, t, history):
        lam = np.maximum(self.treatment_raw(t), 0.0)
        if self.cfg.single_point and history.size:
            lam = np.where(t > history[0], 0.0, lam)
        return lam

    def outcome_raw(self, t, n_times):
        c = self.cfg
        t = np.asarray(t, dtype=float)
        excite = np.zeros_like(t)
        for s in n_times:
            excite += alpha_fn(t - s, c.a_y, c.b_y)
        inner = power_link(c.mu_y + excite, c.beta1) + power_link(self.confounder(t - c.d_u), c.beta1)
        return power_link(inner, c.beta2)

    def outcome(self, n_times):
        def lam(t, history):
            return np.maximum(self.outcome_raw(t, n_times), 0.0)
        return lam


def confounder_grid(cfg: ScenarioConfig, dt: float = DEFAULT_DT) -> TimeGrid:
    return TimeGrid.covering(cfg.horizon, dt, t0=cfg.u_start)


def simulate_trial(cfg: ScenarioConfig, z: int, seed, dt: float = DEFAULT_DT) -> Trial:
    """Draw U, then N by thinning, then Y by thinning given the realised N."""
    rng = make_rng(seed)
    u = sample_gp(cfg.kernel, confounder_grid(cfg, dt), rng)
    lam = _TrialIntensities(cfg, z, u)
    bound = WindowBound(resolution=dt)
    n_ev = thinning(lam.treatment, cfg.horizon, rng, bound, history_dependent=cfg.single_point)
    y_ev = thinning(lam.outcome(n_ev.times), cfg.horizon, rng, bound, history_dependent=False)

    t = TimeGrid.covering(cfg.horizon, dt).times
    raw_n = lam.treatment_raw(t)
    if cfg.single_point and len(n_ev):
        raw_n = raw_n[t <= n_ev.times[0]]
    clamp = (float(np.mean(raw_n < 0)) if raw_n.size else 0.0,
             float(np.mean(lam.outcome_raw(t, n_ev.times) < 0)))
    return Trial(z, n_ev, y_ev, clamp)


def _trial_job(args):
    cfg, z, entropy, dt = args
    return simulate_trial(cfg, z, np.random.SeedSequence(entropy), dt)


def simulate_dataset(cfg: ScenarioConfig, m: int, seed, dt: float = DEFAULT_DT,
                     workers: int = 1) -> Dataset:
    """``m`` trials, the first half with z=1 and the rest with z=0.

    Trial ``i`` is seeded from ``(seed, i)`` so the result does not depend on
    ``workers``. ``seed`` may be an int or a tuple of ints.
    """
    if m < 2 or m % 2:
        raise ValueError(f"trial count must be even and >= 2, got {m}")
    root = tuple(int(s) for s in np.atleast_1d(seed))
    jobs = [(cfg, 1 if i < m // 2 else 0, root + (i,), dt) for i in range(m)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_trial_job, jobs, chunksize=max(1, m // (4 * workers))))
    else:
        trials = [_trial_job(j) for j in jobs]
    clamp_n = float(np.mean([tr.clamp_fraction[0] for tr in trials]))
    clamp_y = float(np.mean([tr.clamp_fraction[1] for tr in trials]))
    meta = {
        "seed": list(root) if len(root) > 1 else root[0],
        "rng": RNG_NAME,
        "config": cfg.to_dict(),
        "clamping": {"treatment_fraction": clamp_n, "outcome_fraction": clamp_y},
    }
    return Dataset(tuple(trials), cfg.horizon, meta)


def default_workers() -> int:
    """Worker cap from ``PPWALD_THREADS`` (defaults to 1)."""
    try:
        return max(1, int(os.environ.get("PPWALD_THREADS", "1")))
    except ValueError:
        return 1
