"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import epmc


def test_twist_two_point_fixture():
    r = epmc.twist_unconstrained([0.0, 1.0], 1.0)
    assert r["weights"][0] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-9)
    assert r["value"] == pytest.approx(0.379885, abs=1e-5)
    assert r["value"] == pytest.approx(r["expected_cost"] + r["entropy"], abs=1e-9)


def test_entropy_and_gap():
    assert epmc.entropy_from_weights([0.25] * 4) == 0.0
    gap, bound, se = epmc.dv_gap_check([0.0, 1.0], 1.0)
    assert gap == pytest.approx(0.120115, abs=1e-5)
    assert bound == pytest.approx(0.125, abs=1e-12)
    assert se >= 0.0


def test_oracle_formulas():
    h = epmc.entropy_drift_shift_analytic(
        np.zeros(1), np.full(1, 0.5), np.eye(1), 1.0)
    assert h == pytest.approx(0.125)
    assert epmc.entropy_poisson_analytic(1.0, 2.0, 1.0) == pytest.approx(2 * math.log(2) - 1)
    est, se = epmc.entropy_mc_poisson(1.0, 2.0, 1.0, 20000, 3)
    assert abs(est - (2 * math.log(2) - 1)) < 3 * se


def test_simulation_reproducibility():
    p = epmc.make_lq_problem(q=1.0, r=1.0, T=1.0, sigma=1.0, box=5.0, steps=20)
    pol = epmc.midpoint_policy(p)
    a = epmc.simulate_ensemble(p, pol, 300, 7)
    b = epmc.simulate_ensemble(p, pol, 300, 7)
    assert np.array_equal(a.states, b.states)
    assert a.states.shape == (300, 21, 1)
    phi = epmc.accumulate_path_cost(p, a, pol)
    assert len(phi) == 300
    assert min(phi) >= 0.0


def test_mvi_closed_form():
    p = epmc.make_lq_problem(box=1.0)
    s = epmc.solve_mvi(p, 0.0, np.zeros(1), np.ones(1), 1.0)
    assert s["u"][0] == pytest.approx(0.5, abs=1e-6)
    res = epmc.mvi_residual(p, 0.0, np.zeros(1), np.ones(1), 1.0, np.array([0.5]), 101)
    assert res >= -1e-6


def test_validate_hvac_instance():
    params = epmc.HvacParams.defaults(3)
    p = epmc.build_hvac_instance(params)
    rep = epmc.validate_problem(p)
    assert rep["ok"], rep["checks"]


def test_small_alternating_run():
    p = epmc.make_lq_problem(steps=20)
    cfg = epmc.SolverConfig()
    cfg.eps = 0.5
    cfg.n_paths = 1500
    cfg.n_iterations = 4
    cfg.policy_cells = 150
    cfg.regression_k = 150
    cfg.seed = 1
    out = epmc.run_alternating(p, cfg)
    reports = out["reports"]
    assert len(reports) == 4
    for rep in reports:
        assert rep["penalized"] == pytest.approx(
            rep["expected_cost_q"] + rep["entropy"] / cfg.eps, abs=1e-9)
        assert rep["entropy"] <= cfg.eps * rep["penalized"] + 1e-9
    assert reports[-1]["penalized"] <= reports[0]["penalized"] + 3 * reports[0]["penalized_se"]
    assert out["final_policy"].representation() == "cloud_backed"


def test_reference_lq():
    ref = epmc.reference_lq_solution(q=1.0, r=1.0, T=1.0, sigma=1.0)
    assert ref["J_star"] == pytest.approx(0.5 * math.log(math.cosh(1.0)), abs=1e-6)
