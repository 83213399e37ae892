"""Command-line front end.

    ppwald simulate|estimate|experiment|diagnose|bootstrap --config <path> [--data <path>] [--out <dir>]

Configs are single JSON files. Unknown keys are rejected at every level so a
typo cannot silently fall back to a default.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .core import DEFAULT_DT, TimeGrid
from .estimate import (BasisSpec, EstimationConfig, cross_validate, fit_acer,
                       fit_observational, itt_curves)
from .experiment import StudyConfig, run_study, summarize
from .inference import bootstrap_band, monotonicity_check
from .io import (config_hash, curve_csv, dump_json, fmt, read_dataset, spectrum_csv,
                 write_atomic, write_dataset, write_fit, _csv_text)
from .simulate import SCENARIOS, ScenarioConfig, default_workers, scenario, simulate_dataset
from .spectral import deconvolve_spectral, dft

COMMANDS = ("simulate", "estimate", "experiment", "diagnose", "bootstrap")
METHODS = ("ridge", "spectral", "observational")


class ConfigError(ValueError):
    pass


def _build(cls, data, where: str):
    """Instantiate a flat dataclass from a dict, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class EstimateBlock:
    method: str = "ridge"
    degree: int = 3
    num_interior_knots: int = 6
    support: float = 1.0
    eta: float | None = None  # None means 1/m
    eps: float = 0.02
    cv_knots: list | None = None  # candidate interior-knot counts
    cv_folds: int = 5
    cv_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    @property
    def basis(self) -> BasisSpec:
        return BasisSpec(self.degree, self.num_interior_knots, self.support)


@dataclass(frozen=True)
class BootstrapBlock:
    b_reps: int = 500
    alpha: float = 0.1
    seed: int = 0
    band_scale: str = "paper"


@dataclass(frozen=True)
class StudyBlock:
    scenarios: list = field(default_factory=lambda: ["1a", "1b", "2a", "2b"])
    m_values: list = field(default_factory=lambda: [40, 400, 800])
    replicates: int = 100
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "1a"
    overrides: dict = field(default_factory=dict)
    scenario_config: dict | None = None  # full ScenarioConfig for scenario "custom"
    m: int = 40
    seed: int = 0
    dt: float = DEFAULT_DT
    estimate: EstimateBlock = field(default_factory=EstimateBlock)
    bootstrap: BootstrapBlock = field(default_factory=BootstrapBlock)
    study: StudyBlock = field(default_factory=StudyBlock)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        data = dict(data)
        data["estimate"] = _build(EstimateBlock, data.get("estimate"), "estimate")
        data["bootstrap"] = _build(BootstrapBlock, data.get("bootstrap"), "bootstrap")
        data["study"] = _build(StudyBlock, data.get("study"), "study")
        cfg = cls(**data)
        cfg.scenario_cfg()  # validate eagerly
        if cfg.dt <= 0:
            raise ConfigError("dt must be positive")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: invalid JSON: {exc}") from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def scenario_cfg(self) -> ScenarioConfig:
        try:
            if self.scenario == "custom":
                if self.scenario_config is None:
                    raise ConfigError("scenario 'custom' needs a scenario_config block")
                return ScenarioConfig.from_dict(self.scenario_config)
            if self.scenario not in SCENARIOS:
                raise ConfigError(f"invalid scenario name {self.scenario!r}; "
                                  f"expected one of {SCENARIOS + ('custom',)}")
            base = scenario(self.scenario).to_dict()
            base.update(self.overrides)
            return ScenarioConfig.from_dict(base)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"scenario: {exc}") from None


# ---------------------------------------------------------------------------
# Commands

def _provenance(cfg: RunConfig, **extra) -> dict:
    return {"config_hash": cfg.hash, "config": cfg.to_dict(), "version": __version__, **extra}


def _require_data(args):
    if args.data is None:
        raise ConfigError(f"{args.command} needs --data")
    return read_dataset(args.data)


def cmd_simulate(cfg: RunConfig, args) -> None:
    sc = cfg.scenario_cfg()
    data = simulate_dataset(sc, cfg.m, cfg.seed, cfg.dt, workers=1)
    write_dataset(data, args.out, {"config_hash": cfg.hash, "scenario": cfg.scenario})


def cmd_estimate(cfg: RunConfig, args) -> None:
    data = _require_data(args)
    est = cfg.estimate
    method = args.method or est.method
    grid = TimeGrid.covering(data.horizon, cfg.dt)
    m = len(data)
    eta = 1.0 / m if est.eta is None else float(est.eta)
    out = Path(args.out)
    prov = _provenance(cfg, method=method, data=str(args.data), m=m)
    if method == "spectral":
        f_hat, h_hat = itt_curves(data, grid)
        acer = deconvolve_spectral(f_hat, h_hat, eps=est.eps)
        dump_json(out / "fit_spectral.json", {"method": "spectral", "eps": est.eps,
                                              "grid": grid.as_dict(),
                                              "acer": [float(v) for v in acer.values], **prov})
        write_atomic(out / "fit_spectral.csv", curve_csv(acer, "acer"))
        write_atomic(out / "spectrum_spectral.csv", spectrum_csv(dft(acer)))
        return
    spec = est.basis
    cv_scores = None
    if est.cv_knots:
        candidates = [BasisSpec(est.degree, int(k), est.support) for k in est.cv_knots]
        spec, cv_scores = cross_validate(data, grid, candidates, eta, est.cv_folds, est.cv_seed,
                                         return_scores=True)
    if method == "observational":
        fit = fit_observational(data, grid, spec, eta)
    else:
        f_hat, h_hat = itt_curves(data, grid)
        fit = fit_acer(f_hat, h_hat, spec, eta)
    extra = dict(prov, basis=spec.to_dict())
    if cv_scores is not None:
        extra["cv"] = {"candidates": list(est.cv_knots), "scores": [float(s) for s in cv_scores],
                       "folds": est.cv_folds, "seed": est.cv_seed}
    write_fit(fit, out, f"fit_{method}", extra)


def cmd_experiment(cfg: RunConfig, args) -> None:
    st = cfg.study
    est = cfg.estimate
    if est.method == "observational":
        raise ConfigError("the r study supports ridge or spectral estimates")
    try:
        study = StudyConfig(tuple(st.scenarios), tuple(st.m_values), st.replicates, st.seed,
                            est.basis, est.eta, cfg.dt, est.method, est.eps, dict(cfg.overrides))
    except ValueError as exc:
        raise ConfigError(f"study: {exc}") from None
    rows = run_study(study, workers=default_workers())
    out = Path(args.out)
    write_atomic(out / "results.csv", _csv_text(["scenario", "m", "replicate", "r"],
                                                ([s, m, k, fmt(r)] for s, m, k, r in rows)))
    write_atomic(out / "summary.csv", _csv_text(["scenario", "m", "median_r", "q25", "q75"],
                                                ([s, m, fmt(a), fmt(b), fmt(c)]
                                                 for s, m, a, b, c in summarize(rows))))
    dump_json(out / "experiment.json", _provenance(cfg))


def cmd_diagnose(cfg: RunConfig, args) -> None:
    data = _require_data(args)
    report = monotonicity_check(data, TimeGrid.covering(data.horizon, cfg.dt))
    out = Path(args.out)
    m = len(data)
    doc = dict(report.to_dict(), m=m, noise_band=2.0 * (0.6931471805599453 / m) ** 0.5,
               **_provenance(cfg, data=str(args.data)))
    dump_json(out / "monotonicity.json", doc)
    write_atomic(out / "survival.csv", report.curves_csv())


def cmd_bootstrap(cfg: RunConfig, args) -> None:
    data = _require_data(args)
    est, bs = cfg.estimate, cfg.bootstrap
    fit_cfg = EstimationConfig(est.basis, est.eta, TimeGrid.covering(data.horizon, cfg.dt))
    band = bootstrap_band(data, fit_cfg, bs.b_reps, bs.alpha, bs.seed, bs.band_scale)
    out = Path(args.out)
    dump_json(out / "band.json", dict(band.to_dict(), **_provenance(cfg, data=str(args.data))))
    write_atomic(out / "band.csv", band.to_csv())


HANDLERS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "experiment": cmd_experiment,
            "diagnose": cmd_diagnose, "bootstrap": cmd_bootstrap}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppwald",
                                description="Generalised Wald estimation for point processes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run config (required for simulate and experiment)")
    p.add_argument("--data", help="dataset directory or events CSV")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--method", choices=METHODS, help="override estimate.method")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is None:
            if args.command in ("simulate", "experiment"):
                raise ConfigError(f"{args.command} needs --config")
            cfg = RunConfig()
        else:
            cfg = RunConfig.load(args.config)
        HANDLERS[args.command](cfg, args)
    except (ValueError, OSError, ZeroDivisionError, RuntimeError) as exc:
        print(f"ppwald {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
