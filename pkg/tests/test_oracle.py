import math

import numpy as np
import pytest
from scipy import integrate as sci_integrate

from ppwald.core import Curve, EventTimes, TimeGrid
from ppwald.oracle import (AcerSurface, alpha_derivative, alpha_integral,
                           closed_form_power_surface, criterion_r, max_shift_zscore,
                           mc_acer_scenario3, multi_event_ace, scenario_truth, shift_deviation,
                           true_acer_linear, true_acer_model2)
from ppwald.simulate import alpha_fn, scenario


def test_alpha_derivative_matches_finite_difference():
    t = np.linspace(0.01, 2.0, 200)
    h = 1e-6
    fd = (alpha_fn(t + h, 8, 1) - alpha_fn(t - h, 8, 1)) / (2 * h)
    assert np.allclose(alpha_derivative(t, 8, 1), fd, rtol=1e-6, atol=1e-6)
    assert alpha_derivative(-0.3, 8, 1) == 0.0


def test_alpha_integral_matches_quadrature():
    for t in (0.05, 0.125, 0.7, 3.0):
        ref, _ = sci_integrate.quad(lambda s: alpha_fn(s, 8, 1), 0, t)
        assert alpha_integral(t, 8, 1) == pytest.approx(ref, rel=1e-10)
    assert alpha_integral(-1.0, 8, 1) == 0.0


# ---------------------------------------------------------------------------
# closed forms

def test_true_acer_linear(grid):
    g = Curve(grid, alpha_fn(grid.times, 8, 1))
    acer = true_acer_linear(g)
    assert np.array_equal(acer.values, -alpha_fn(grid.times, 8, 1))
    assert acer.values[0] == 0
    assert np.all(true_acer_linear(Curve.zeros(grid)).values == 0)


def test_true_acer_model2_example(grid):
    g = Curve(grid, alpha_fn(grid.times, 8, 1))
    acer = true_acer_model2(0.2, 2, g)
    k = grid.index_of(0.125)
    assert acer.values[k] == pytest.approx(0.04 - (0.2 + 8 / math.e) ** 2, rel=1e-12)
    assert acer.values[k] == pytest.approx(-9.839, abs=1e-3)
    assert acer.values[0] == 0


def test_true_acer_model2_reduces_to_linear(grid):
    g = Curve(grid, alpha_fn(grid.times, 8, 1))
    assert np.array_equal(true_acer_model2(0.2, 1, g).values, true_acer_linear(g).values)


def test_oracle_curves_vanish_at_nonpositive_lag():
    g = TimeGrid(-1.0, 0.005, 801)
    kern = Curve(g, alpha_fn(g.times, 8, 1))
    for acer in (true_acer_linear(kern), true_acer_model2(0.2, 2, kern)):
        assert np.all(acer.values[g.times <= 1e-12] == 0)


@pytest.mark.parametrize("name", ["1a", "1b", "2a", "2b"])
def test_scenario_truth(name, grid):
    truth = scenario_truth(scenario(name), grid)
    cfg = scenario(name)
    if cfg.beta1 == 1:
        assert np.array_equal(truth.values, -alpha_fn(grid.times, 8, 1))
    else:
        assert truth.values[grid.index_of(0.125)] == pytest.approx(-9.8387, abs=1e-3)


def test_scenario_truth_rejects_non_additive(grid):
    with pytest.raises(ValueError, match="no closed form"):
        scenario_truth(scenario("3"), grid)


# ---------------------------------------------------------------------------
# criterion r

def test_criterion_r_examples(grid):
    truth = Curve(grid, -alpha_fn(grid.times, 8, 1))
    assert criterion_r(truth, truth) == 0.0
    assert criterion_r(Curve.zeros(grid), truth) == pytest.approx(1.0, rel=1e-14)
    assert criterion_r(2 * truth, truth) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(ZeroDivisionError, match="null truth"):
        criterion_r(truth, Curve.zeros(grid))


def test_criterion_r_uses_support(grid):
    truth = Curve(grid, -alpha_fn(grid.times, 8, 1))
    est = truth + Curve(grid, np.where(grid.times > 1.5, 5.0, 0.0))
    assert criterion_r(est, truth, (0.0, 1.0)) == 0.0
    assert criterion_r(est, truth, (0.0, 3.0)) > 1


# ---------------------------------------------------------------------------
# multi-event effects

@pytest.fixture(scope="module")
def acer_curve():
    g = TimeGrid.covering()
    return Curve(g, -alpha_fn(g.times, 8, 1))


def test_multi_event_identical_paths(acer_curve):
    ev = EventTimes(np.array([0.2, 0.9]))
    assert multi_event_ace(acer_curve, ev, ev, 2.0) == 0.0


def test_multi_event_single_event_reduces(acer_curve):
    # -int_{tau1}^t ACER(t - tau) dtau = int_0^{t - tau1} alpha
    dt = acer_curve.grid.dt
    # trapezoid error bound: length * dt^2 / 12 * max|alpha''|, max|alpha''| = 2 b a^3
    for tau1, t in ((0.2, 1.0), (0.5, 0.8), (0.1234, 2.5)):
        got = multi_event_ace(acer_curve, EventTimes(np.array([tau1])), EventTimes(), t)
        tol = (t - tau1) * dt ** 2 / 12 * 2 * 8 ** 3
        assert got == pytest.approx(alpha_integral(t - tau1, 8, 1), abs=tol)


def test_multi_event_additive(acer_curve):
    both = multi_event_ace(acer_curve, EventTimes(np.array([0.2, 0.5])), EventTimes(), 1.0)
    one = multi_event_ace(acer_curve, EventTimes(np.array([0.2])), EventTimes(), 1.0)
    two = multi_event_ace(acer_curve, EventTimes(np.array([0.5])), EventTimes(), 1.0)
    assert abs(both - (one + two)) < 1e-10


def test_multi_event_outside_grid(acer_curve):
    with pytest.raises(ValueError):
        multi_event_ace(acer_curve, EventTimes(), EventTimes(), 3.5)


# ---------------------------------------------------------------------------
# Monte Carlo surface

TAUS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


def test_mc_requires_non_additive_link():
    with pytest.raises(ValueError, match="use closed form instead"):
        mc_acer_scenario3(scenario("2a"), TAUS, TimeGrid.covering())


def test_mc_unconfounded_matches_closed_form():
    cfg = scenario("3", sigma=0.0)
    tg = TimeGrid.covering()
    surf = mc_acer_scenario3(cfg, TAUS, tg, n_mc=1000)
    closed = closed_form_power_surface(cfg, TAUS, tg)
    assert np.all(surf.mc_se == 0)
    # trapezoid error bound t * dt^2 / 12 * max|I''| on top of 1e-3
    s = np.linspace(0, 3, 30001)
    second = np.gradient(np.gradient(
        -alpha_derivative(s, 8, 1) * 3 * (0.2 + alpha_fn(s, 8, 1)) ** 2, s), s)
    bound = 1e-3 + tg.times * tg.dt ** 2 / 12 * np.abs(second).max()
    assert np.all(np.abs(surf.values - closed) <= bound[None, :])


def test_mc_no_anticipation():
    surf = mc_acer_scenario3(scenario("3"), TAUS, TimeGrid.covering(), n_mc=1000, seed=2)
    for i, tau in enumerate(TAUS):
        assert np.all(surf.values[i, surf.t_grid <= tau + 1e-12] == 0)


def test_mc_deterministic_and_error_scaling():
    cfg = scenario("3")
    tg = TimeGrid.covering()
    a = mc_acer_scenario3(cfg, TAUS, tg, n_mc=1000, seed=4)
    b = mc_acer_scenario3(cfg, TAUS, tg, n_mc=1000, seed=4)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.mc_se, b.mc_se)
    c = mc_acer_scenario3(cfg, TAUS, tg, n_mc=4000, seed=5)
    mask = a.mc_se > 1e-3
    ratio = np.median(a.mc_se[mask] / c.mc_se[mask])
    assert ratio == pytest.approx(2.0, abs=0.2)


def test_mc_validates_inputs():
    cfg = scenario("3")
    with pytest.raises(ValueError):
        mc_acer_scenario3(cfg, TAUS, TimeGrid.covering(), n_mc=10)
    with pytest.raises(ValueError):
        mc_acer_scenario3(cfg, TAUS, TimeGrid(0.5, 0.005, 10), n_mc=1000)


def test_surface_csv_and_lookup():
    surf = mc_acer_scenario3(scenario("3"), TAUS, TimeGrid.covering(), n_mc=1000)
    lines = surf.to_csv().splitlines()
    assert lines[0] == "t,tau,acer,mc_se"
    assert len(lines) == 1 + TAUS.size * surf.t_grid.size
    assert np.array_equal(surf.at(0.5), surf.values[2])
    with pytest.raises(KeyError):
        surf.at(0.3)


def test_shift_deviation_unpaired_fallback():
    # a surface that is exactly shift-invariant on the grid has zero deviation
    t = np.arange(0, 201) * 0.01
    base = -alpha_fn(t, 8, 1)
    taus = np.array([0.0, 0.5])
    vals = np.array([base, np.interp(t - 0.5, t, base, left=0.0)])
    surf = AcerSurface(taus, t, vals, np.full(vals.shape, 0.01), 1000)
    dev, se = shift_deviation(surf)
    assert np.max(dev) < 1e-12
    assert np.allclose(se[1][t >= 0.5], np.sqrt(2) * 0.01)
    assert max_shift_zscore(surf) < 1e-9


def test_sensitivity_to_confounder_distribution():
    tg = TimeGrid.covering()
    lo = mc_acer_scenario3(scenario("3", sigma=0.1), TAUS, tg, n_mc=20000, seed=1)
    hi = mc_acer_scenario3(scenario("3", sigma=0.3), TAUS, tg, n_mc=20000, seed=2)
    z = np.abs(lo.values - hi.values) / np.sqrt(lo.mc_se ** 2 + hi.mc_se ** 2 + 1e-300)
    assert z.max() > 3


@pytest.mark.xfail(strict=True, reason=(
    "a stationary confounder makes ACER(t; tau) depend on t - tau only, so the "
    "surface is shift-invariant up to Monte Carlo noise; see the decisions ledger"))
def test_mc_surface_not_shift_invariant():
    surf = mc_acer_scenario3(scenario("3"), TAUS, TimeGrid.covering(), n_mc=20000, seed=3)
    assert max_shift_zscore(surf) > 3
