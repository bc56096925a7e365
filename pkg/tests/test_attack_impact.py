import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import REF_SIGMA_R_LQI, make_knowledge
from oracles import attacked_loop_final_state, chi2_grid_max
from stealthsim.attack import ImpactProblem, build_Txa, detector_trace, solve_worst_case
from stealthsim.detect import DetectorConfig


@pytest.fixture(scope="module")
def lqg_mewma_plan(know_lqg_mewma):
    return solve_worst_case(build_Txa(know_lqg_mewma, 1800), know_lqg_mewma.detector)


@pytest.fixture(scope="module")
def lqg_chi2_plan(know_lqg_chi2):
    return solve_worst_case(build_Txa(know_lqg_chi2, 1800), know_lqg_chi2.detector)


def _final_state(know, a):
    c = know.controller
    return attacked_loop_final_state(know.model.A, know.model.B, know.model.C, c.Ac, c.Bc, c.Cc, c.Tc,
                                     know.sqrt_cov, a)


def test_single_step_horizon_has_no_effect(know_lqg_mewma):
    assert not build_Txa(know_lqg_mewma, 1).T_xa.any()
    with pytest.raises(ValueError):
        build_Txa(know_lqg_mewma, 0)


def test_columns_match_impulse_responses(know_lqg_mewma):
    N = 40
    p = build_Txa(know_lqg_mewma, N)
    for k in (0, 7, 25, 38, 39):
        for j in range(2):
            a = np.zeros((N, 2))
            a[k, j] = 1.0
            assert np.max(np.abs(_final_state(know_lqg_mewma, a) - p.T_xa[:, 2 * k + j])) < 1e-10


def test_integral_action_amplifies_early_references(model, lqg, lqi, mewma):
    N = 600
    t_lqg = build_Txa(make_knowledge(model, lqg, mewma), N).T_xa
    t_lqi = build_Txa(make_knowledge(model, lqi, mewma), N).T_xa
    early = slice(0, 2 * 100)
    assert np.linalg.norm(t_lqi[:, early], axis=0).sum() > np.linalg.norm(t_lqg[:, early], axis=0).sum()


def test_chi2_closed_form_against_grid():
    T = np.array([[0.7, -1.3]])
    cfg = DetectorConfig("chi2", 2.5)
    p = ImpactProblem(T, 2, np.eye(1), np.zeros((1, 1)), n_x=1)
    solve_worst_case(p, cfg)
    assert p.theoretical_impact == pytest.approx(chi2_grid_max(T[0], 2.5), abs=1e-3)
    assert p.theoretical_impact == pytest.approx(np.sqrt(2.5) * (0.7 + 1.3), rel=1e-12)


def test_mewma_impact_near_reported(lqg_mewma_plan):
    assert lqg_mewma_plan.theoretical_impact == pytest.approx(4.79, rel=0.15)
    assert lqg_mewma_plan.target_index == 0


def test_chi2_impact_near_reported(lqg_chi2_plan, lqg_mewma_plan):
    assert lqg_chi2_plan.theoretical_impact == pytest.approx(16.7881, rel=0.15)
    ratio = lqg_chi2_plan.theoretical_impact / lqg_mewma_plan.theoretical_impact
    assert lqg_mewma_plan.theoretical_impact < lqg_chi2_plan.theoretical_impact
    assert ratio == pytest.approx(3.5, rel=0.20)


def test_lqi_impact_near_reported(model, lqi, mewma):
    know = make_knowledge(model, lqi, mewma, REF_SIGMA_R_LQI)
    p = solve_worst_case(build_Txa(know, 1800), mewma)
    assert p.theoretical_impact == pytest.approx(9.13, rel=0.15)


def test_plan_satisfies_detector_constraints(lqg_mewma_plan, lqg_chi2_plan, mewma, chi2):
    for p, cfg in ((lqg_mewma_plan, mewma), (lqg_chi2_plan, chi2)):
        assert np.all(detector_trace(p.a_star, cfg) <= cfg.J_D * (1 + 1e-12))
        assert not p.suboptimal
        assert p.a_star.shape == (1800, 2)


def test_margin_keeps_plan_strictly_inside(know_lqg_mewma):
    p = solve_worst_case(build_Txa(know_lqg_mewma, 300), know_lqg_mewma.detector, margin=1e-4)
    assert np.all(p.feasibility_margin >= 1e-4 * know_lqg_mewma.detector.J_D * (1 - 1e-9))
    ref = solve_worst_case(build_Txa(know_lqg_mewma, 300), know_lqg_mewma.detector)
    assert p.theoretical_impact == pytest.approx(ref.theoretical_impact * np.sqrt(1 - 1e-4), rel=1e-9)


def test_linear_simulation_reproduces_plan(know_lqg_mewma, lqg_mewma_plan):
    p = lqg_mewma_plan
    x = _final_state(know_lqg_mewma, p.a_star)
    assert np.max(np.abs(x - p.final_state(p.a_star))) < 1e-8
    assert abs(np.max(np.abs(x)) - p.theoretical_impact) < 1e-6


def test_projected_ascent_agrees_with_closed_form(know_lqg_mewma):
    N = 25
    exact = solve_worst_case(build_Txa(know_lqg_mewma, N), know_lqg_mewma.detector)
    proj = solve_worst_case(build_Txa(know_lqg_mewma, N), know_lqg_mewma.detector,
                            method="projected", restarts=3, max_iter=400, tol=1e-9)
    assert proj.target_index == exact.target_index
    assert proj.theoretical_impact == pytest.approx(exact.theoretical_impact, rel=2e-3)
    assert proj.theoretical_impact <= exact.theoretical_impact * (1 + 1e-9)
    assert np.all(detector_trace(proj.a_star, know_lqg_mewma.detector) <= know_lqg_mewma.detector.J_D * (1 + 1e-9))


def test_exact_mewma_beats_random_feasible_points(know_lqg_mewma):
    N = 30
    cfg = know_lqg_mewma.detector
    p = solve_worst_case(build_Txa(know_lqg_mewma, N), cfg)
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.standard_normal((N, 2))
        a /= np.sqrt(detector_trace(a, cfg).max() / cfg.J_D)
        assert np.max(np.abs(p.final_state(a))) <= p.theoretical_impact * (1 + 1e-12)


def test_unknown_method_rejected(know_lqg_mewma):
    with pytest.raises(ValueError):
        solve_worst_case(build_Txa(know_lqg_mewma, 5), know_lqg_mewma.detector, method="simplex")


@given(st.floats(1e-3, 1e3))
def test_target_invariant_to_scaling(scale):
    T = np.array([[0.2, -0.5, 0.1, 0.4], [0.3, 0.3, -0.6, 0.1], [-0.4, 0.2, 0.2, -0.3]])
    cfg = DetectorConfig("mewma", 4.3918, 0.2)
    base = solve_worst_case(ImpactProblem(T, 2, np.eye(3), np.zeros((3, 2)), n_x=3), cfg)
    scaled = solve_worst_case(ImpactProblem(scale * T, 2, np.eye(3), np.zeros((3, 2)), n_x=3), cfg)
    assert (scaled.target_index, scaled.target_sign) == (base.target_index, base.target_sign)
    assert scaled.theoretical_impact == pytest.approx(scale * base.theoretical_impact, rel=1e-9)


def test_ties_prefer_lowest_index_positive_sign():
    T = np.array([[1.0, 0.0], [1.0, 0.0]])
    p = solve_worst_case(ImpactProblem(T, 1, np.eye(2), np.zeros((2, 2)), n_x=2), DetectorConfig("chi2", 4.0))
    assert (p.target_index, p.target_sign) == (0, 1.0)


def test_exports(tmp_path, lqg_chi2_plan):
    csv = tmp_path / "a.csv"
    lqg_chi2_plan.export_csv(csv)
    lines = csv.read_text().splitlines()
    assert lines[0] == "k,a1,a2" and len(lines) == 1801
    k, a1, a2 = lines[5].split(",")
    assert int(k) == 4 and float(a1) == pytest.approx(lqg_chi2_plan.a_star[4, 0], rel=1e-11)
    js = tmp_path / "p.json"
    lqg_chi2_plan.save_summary(js)
    d = json.loads(js.read_text())
    assert d["schema_version"] == 1 and d["target_index"] == lqg_chi2_plan.target_index
    assert len(d["feasibility_margin"]) == 1800
    assert d["theoretical_impact"] == lqg_chi2_plan.theoretical_impact
