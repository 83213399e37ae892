"""Replicated r-versus-m study across simulation scenarios."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_DT, TimeGrid
from .estimate import BasisSpec, fit_acer, itt_curves
from .oracle import criterion_r, scenario_truth
from .simulate import SCENARIOS, ScenarioConfig, scenario, simulate_dataset
from .spectral import deconvolve_spectral

METHODS = ("ridge", "spectral")


@dataclass(frozen=True)
class StudyConfig:
    scenarios: tuple = ("1a", "1b", "2a", "2b")
    m_values: tuple = (40, 400, 800)
    replicates: int = 100
    seed: int = 0
    basis: BasisSpec = field(default_factory=BasisSpec)
    eta: float | None = None  # None means 1/m
    dt: float = DEFAULT_DT
    method: str = "ridge"
    eps: float = 0.02
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(str(s) for s in self.scenarios))
        object.__setattr__(self, "m_values", tuple(int(m) for m in self.m_values))
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise ValueError(f"unknown scenario {s!r}; expected one of {SCENARIOS}")
            if s == "3":
                raise ValueError("scenario 3 has no closed-form truth; the r study covers 1a-2b")
        for m in self.m_values:
            if m < 2 or m % 2:
                raise ValueError(f"trial count must be even and >= 2, got {m}")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    def config_for(self, name: str) -> ScenarioConfig:
        return scenario(name, **self.overrides)


def replicate_seed(seed: int, name: str, m: int, replicate: int) -> tuple:
    """Entropy for one replicate; independent of how the study is split up."""
    return (int(seed), SCENARIOS.index(name), int(m), int(replicate))


def run_replicate(study: StudyConfig, name: str, m: int, replicate: int) -> float:
    cfg = study.config_for(name)
    grid = TimeGrid.covering(cfg.horizon, study.dt)
    data = simulate_dataset(cfg, m, replicate_seed(study.seed, name, m, replicate), study.dt)
    f_hat, h_hat = itt_curves(data, grid)
    if study.method == "ridge":
        eta = 1.0 / m if study.eta is None else study.eta
        est = fit_acer(f_hat, h_hat, study.basis, eta).acer
    else:
        est = deconvolve_spectral(f_hat, h_hat, eps=study.eps)
    return criterion_r(est, scenario_truth(cfg, grid), (0.0, study.basis.support))


def _job(args):
    study, name, m, rep = args
    return name, m, rep, run_replicate(study, name, m, rep)


def run_study(study: StudyConfig, workers: int = 1) -> list[tuple]:
    """Rows ``(scenario, m, replicate, r)`` in a fixed order."""
    jobs = [(study, s, m, k) for s in study.scenarios for m in study.m_values
            for k in range(study.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    return [_job(j) for j in jobs]


def summarize(rows) -> list[tuple]:
    """Rows ``(scenario, m, median_r, q25, q75)`` in first-seen order."""
    groups: dict[tuple, list[float]] = {}
    for name, m, _, r in rows:
        groups.setdefault((name, m), []).append(r)
    out = []
    for (name, m), rs in groups.items():
        q25, med, q75 = np.quantile(rs, [0.25, 0.5, 0.75])
        out.append((name, m, float(med), float(q25), float(q75)))
    return out
