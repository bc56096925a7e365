import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import mewma_run_lengths
from stealthsim.detect import (DetectorConfig, DetectorState, detector_step, replay, simulate_arl,
                               tune_chi2_threshold, tune_mewma_threshold, tune_threshold,
                               write_alarm_log)
from stealthsim.errors import SchemaError

residual = st.lists(st.floats(-20, 20), min_size=2, max_size=2)


def test_chi2_worked_example(chi2):
    s, y, alarm = detector_step(chi2, DetectorState.initial(chi2), [1.0, 1.0])
    assert y == 2.0 and not alarm and s.x_D is None


def test_mewma_worked_example(mewma):
    s, y, alarm = detector_step(mewma, DetectorState.initial(mewma), [3.0, 3.0])
    assert y == pytest.approx(6.48, abs=1e-12)
    assert alarm and np.array_equal(s.x_D, np.zeros(2))
    assert s.alarm_count == 1 and s.steps_since_alarm == 0


def test_alarm_is_strict():
    cfg = DetectorConfig("chi2", 2.0)
    _, y, alarm = detector_step(cfg, DetectorState.initial(cfg), [1.0, 1.0])
    assert y == 2.0 and not alarm


def test_config_validation():
    for bad in (dict(variant="cusum", J_D=1.0), dict(variant="mewma", J_D=1.0, beta=0.0),
                dict(variant="mewma", J_D=1.0, beta=1.5), dict(variant="chi2", J_D=0.0)):
        with pytest.raises(ValueError):
            DetectorConfig(**bad)


def test_residual_shape_checked(chi2):
    with pytest.raises(ValueError):
        detector_step(chi2, DetectorState.initial(chi2), [1.0, 2.0, 3.0])


@given(st.lists(residual, min_size=1, max_size=40))
def test_mewma_unit_beta_is_chi2(rs):
    m, c = DetectorConfig("mewma", 5.9915, 1.0), DetectorConfig("chi2", 5.9915)
    ym, am, _ = replay(m, rs)
    yc, ac, _ = replay(c, rs)
    assert np.allclose(ym, yc, rtol=1e-12) and np.array_equal(am, ac)


@given(st.lists(residual, min_size=1, max_size=60), st.floats(0.05, 1.0))
def test_output_nonnegative_and_state_bounded(rs, beta):
    cfg = DetectorConfig("mewma", 4.3918, beta)
    state = DetectorState.initial(cfg)
    for r in rs:
        state, y, alarm = detector_step(cfg, state, r)
        assert y >= 0
        if not alarm:
            assert state.x_D @ state.x_D <= beta / (2 - beta) * cfg.J_D * (1 + 1e-12)
        else:
            assert not state.x_D.any()


@given(st.lists(residual, min_size=1, max_size=30), residual)
def test_output_after_reset_ignores_history(history, r):
    cfg = DetectorConfig("mewma", 4.3918, 0.2)
    state = DetectorState.initial(cfg)
    for h in history:
        state, _, _ = detector_step(cfg, state, h)
    state, _, _ = detector_step(cfg, state, [50.0, 50.0])  # forced alarm
    _, y, _ = detector_step(cfg, state, r)
    r = np.asarray(r)
    assert y == pytest.approx((2 - 0.2) / 0.2 * 0.2 ** 2 * (r @ r), rel=1e-12, abs=1e-300)


def test_chi2_threshold_closed_form():
    assert tune_chi2_threshold(20) == pytest.approx(5.9915, abs=1e-4)
    assert tune_chi2_threshold(np.e) == pytest.approx(2.0, abs=1e-12)
    assert tune_chi2_threshold(20, dim=3) == pytest.approx(7.8147, abs=1e-4)
    with pytest.raises(ValueError):
        tune_chi2_threshold(1.0)


def test_chi2_monte_carlo_arl():
    J = tune_chi2_threshold(20)
    est = simulate_arl(J, 1.0, n_steps=1_000_000, seed=1)
    assert est.arl == pytest.approx(20, rel=0.05)
    # independent sequential oracle (no batching, no vectorization)
    assert mewma_run_lengths(J, 1.0, 200_000, seed=2) == pytest.approx(20, rel=0.05)


@pytest.mark.slow
def test_mewma_tuned_threshold():
    J = tune_mewma_threshold(20, 0.2, seed=0)
    assert J == pytest.approx(4.3918, abs=0.15)
    assert simulate_arl(J, 0.2, n_steps=1_000_000, seed=123).arl == pytest.approx(20, rel=0.10)
    assert mewma_run_lengths(J, 0.2, 300_000, seed=5) == pytest.approx(20, rel=0.10)


def test_mewma_unit_beta_tunes_to_chi2():
    J = tune_mewma_threshold(20, 1.0, n_steps=400_000, seed=3)
    assert J == pytest.approx(tune_chi2_threshold(20), abs=0.15)


def test_threshold_increases_with_arl():
    J20 = tune_mewma_threshold(20, 0.2, n_steps=400_000, seed=4)
    J50 = tune_mewma_threshold(50, 0.2, n_steps=400_000, seed=4)
    assert J50 > J20


def test_tune_threshold_dispatch():
    cfg = tune_threshold("chi2", 20)
    assert cfg.variant == "chi2" and cfg.J_D == pytest.approx(5.9915, abs=1e-4)
    with pytest.raises(ValueError):
        tune_mewma_threshold(20, 0.0)


def test_batch_estimates_have_small_error():
    est = simulate_arl(5.9915, 1.0, n_steps=1_000_000, seed=0)
    assert len(est.batch_arls) == 20
    assert est.stderr / est.arl < 0.02


def test_config_json_round_trip(tmp_path, mewma):
    path = tmp_path / "d.json"
    mewma.save(path)
    assert DetectorConfig.load(path) == mewma
    d = mewma.to_dict()
    d["schema_version"] = 7
    with pytest.raises(SchemaError):
        DetectorConfig.from_dict(d)


def test_alarm_log(tmp_path, chi2):
    y, alarms, state = replay(chi2, [[0.0, 0.0], [3.0, 0.0], [1.0, 1.0]])
    assert state.alarm_count == 1
    path = tmp_path / "alarms.csv"
    write_alarm_log(path, y, alarms, k0=10)
    lines = path.read_text().splitlines()
    assert lines == ["k,y_D,alarm", "10,0,0", "11,9,1", "12,2,0"]
