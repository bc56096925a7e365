import dataclasses

import numpy as np
import pytest

from stealthsim.errors import RecordFormatError
from stealthsim.plant import PARAM_BOUNDS, PlantParams, simulate_open_loop
from stealthsim.sysid import (FIT_NAMES, ExperimentRecord, bound_midpoints, estimate_parameters,
                              fit_objective, synthetic_record)


@pytest.fixture(scope="module")
def truth():
    return PlantParams.lumped()


@pytest.fixture(scope="module")
def clean_record(truth):
    return synthetic_record(truth, seed=0)


@pytest.fixture(scope="module")
def clean_fit(clean_record):
    return estimate_parameters(clean_record)


def test_objective_zero_on_own_data(truth, clean_record):
    assert fit_objective(clean_record, truth) <= 1e-10


def test_objective_symmetric_under_channel_swap(truth):
    rec = synthetic_record(dataclasses.replace(truth, alpha1=0.009), seed=2, sigma_meas=0.1)
    p = dataclasses.replace(truth, alpha1=0.0095, alpha2=0.0048, tau_c1=22.0, tau_c2=30.0)
    swapped_rec = ExperimentRecord(rec.t, rec.Q[:, ::-1].copy(), rec.T_meas[:, ::-1].copy(), rec.T_amb)
    swapped_p = dataclasses.replace(p, alpha1=p.alpha2, alpha2=p.alpha1, tau_c1=p.tau_c2, tau_c2=p.tau_c1)
    assert fit_objective(swapped_rec, swapped_p) == pytest.approx(fit_objective(rec, p), rel=1e-12)


def test_objective_scales_quadratically(truth):
    Q = np.tile([40.0, 20.0], (300, 1))
    X = simulate_open_loop(truth, np.full(4, 294.15), Q, 294.15)[:, 2:4]
    d = 1e-3 * np.sin(np.arange(300))[:, None] * np.ones((1, 2))
    d[0] = 0.0  # keep the rollout's initial state fixed
    t = np.arange(300, dtype=float)
    one = fit_objective(ExperimentRecord(t, Q, X / (1 - d)), truth)
    two = fit_objective(ExperimentRecord(t, Q, X / (1 - 2 * d)), truth)
    assert two == pytest.approx(4 * one, rel=1e-9)


def test_objective_infinite_on_blow_up(clean_record, truth):
    assert fit_objective(clean_record, dataclasses.replace(truth, c_p=1e-9)) == np.inf


def test_noise_free_round_trip(truth, clean_fit):
    for k in FIT_NAMES:
        assert getattr(clean_fit.params, k) == pytest.approx(getattr(truth, k), rel=0.01), k
    assert clean_fit.converged
    assert clean_fit.objective_value <= clean_fit.initial_objective
    assert clean_fit.params.within_bounds()


@pytest.mark.slow
def test_noisy_round_trip_median(truth):
    fits = [estimate_parameters(synthetic_record(truth, seed=s, sigma_meas=0.15)) for s in range(5)]
    for k in FIT_NAMES:
        med = np.median([getattr(f.params, k) for f in fits])
        assert med == pytest.approx(getattr(truth, k), rel=0.10), k


def test_candidates_respect_bounds(clean_record):
    seen = []
    estimate_parameters(clean_record, max_iter=300, restarts=0, on_eval=seen.append)
    assert seen
    for p in seen:
        assert p.within_bounds()


def test_fit_is_deterministic(clean_record):
    a = estimate_parameters(clean_record, max_iter=200, restarts=0)
    b = estimate_parameters(clean_record, max_iter=200, restarts=0)
    assert a.params == b.params and a.objective_value == b.objective_value


def test_iteration_cap_reports_not_converged(clean_record):
    r = estimate_parameters(clean_record, max_iter=20, restarts=0)
    assert not r.converged and r.iterations <= 20
    assert r.objective_value <= r.initial_objective


def test_init_outside_bounds_rejected(clean_record, truth):
    with pytest.raises(ValueError):
        estimate_parameters(clean_record, init=dataclasses.replace(truth, U=100.0))


def test_bound_midpoints():
    p = bound_midpoints()
    for k in FIT_NAMES:
        lo, hi = PARAM_BOUNDS[k]
        assert getattr(p, k) == pytest.approx(0.5 * (lo + hi))


def test_record_csv_round_trip(tmp_path, clean_record):
    path = tmp_path / "rec.csv"
    rec = dataclasses.replace(clean_record, T_amb=296.0)
    rec.to_csv(path)
    assert path.read_text().splitlines()[0] == "t,Q1,Q2,TS1,TS2"
    back = ExperimentRecord.from_csv(path)
    assert np.array_equal(back.T_meas, rec.T_meas) and np.array_equal(back.Q, rec.Q)
    assert back.T_amb == 296.0


def test_record_header_errors_name_the_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,Q1,Qx,TS1,TS2\n0,1,1,300,300\n1,1,1,300,300\n")
    with pytest.raises(RecordFormatError, match="Qx"):
        ExperimentRecord.from_csv(path)


def test_record_validation():
    t = np.arange(3, dtype=float)
    Q = np.zeros((3, 2))
    T = np.full((3, 2), 300.0)
    with pytest.raises(RecordFormatError):
        ExperimentRecord(t[::-1].copy(), Q, T)
    with pytest.raises(RecordFormatError):
        ExperimentRecord(t, Q[:2], T)
    with pytest.raises(RecordFormatError):
        ExperimentRecord(t, Q, -T)
    with pytest.raises(RecordFormatError):
        ExperimentRecord(2 * t, Q, T)


def test_reported_fit_within_bounds():
    assert PlantParams.identified().within_bounds()
