import sys

import numpy as np
import pytest
from hypothesis import settings

from stealthsim.attack import AttackerKnowledge
from stealthsim.detect import DetectorConfig
from stealthsim.plant import PlantParams, discrete_model
from stealthsim.synthesis import CostWeights, ResidualStats, design

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")

# Residual covariances reported for the hardware runs.
REF_SIGMA_R_LQG = np.array([[0.0555, 0.0013], [0.0013, 0.0482]])
REF_SIGMA_R_LQI = np.array([[0.0208, 0.0015], [0.0015, 0.0426]])
REF_J_MEWMA = 4.3918
REF_J_CHI2 = 5.9915

REF_A = np.array([
    [0.9784, 0.0113, 0, 0],
    [0.0113, 0.9784, 0, 0],
    [0.0385, 0.0002, 0.9610, 0],
    [0.0002, 0.0430, 0, 0.9565],
])
REF_B = np.array([[0.0085, 0], [0, 0.0047], [0.0002, 0], [0, 0.0001]])


@pytest.fixture(scope="session")
def params():
    return PlantParams.lumped()


@pytest.fixture(scope="session")
def model_ss(params):
    return discrete_model(params)


@pytest.fixture(scope="session")
def model(model_ss):
    return model_ss[0]


@pytest.fixture(scope="session")
def ss(model_ss):
    return model_ss[1]


@pytest.fixture(scope="session")
def lqg(model):
    return design(model, "LQG")


@pytest.fixture(scope="session")
def lqi(model):
    return design(model, "LQI")


@pytest.fixture(scope="session")
def mewma():
    return DetectorConfig("mewma", REF_J_MEWMA, 0.2)


@pytest.fixture(scope="session")
def chi2():
    return DetectorConfig("chi2", REF_J_CHI2)


def make_knowledge(model, ctrl, det, Sigma_r=REF_SIGMA_R_LQG, Sigma_nu=None):
    w = CostWeights.default()
    stats = ResidualStats.from_covariance(Sigma_r)
    if Sigma_nu is not None:
        ctrl = ctrl.with_injection(Sigma_nu)
        stats = stats.with_injection(model.C, ctrl.Tc, ctrl.Sigma_nu)
    return AttackerKnowledge(model, ctrl, det, stats, w.Sigma_w, w.Sigma_v, ctrl.Sigma_nu)


@pytest.fixture(scope="session")
def know_lqg_mewma(model, lqg, mewma):
    return make_knowledge(model, lqg, mewma)


@pytest.fixture(scope="session")
def know_lqg_chi2(model, lqg, chi2):
    return make_knowledge(model, lqg, chi2)


@pytest.fixture(scope="session")
def know_lqi_mewma(model, lqi, mewma):
    return make_knowledge(model, lqi, mewma, REF_SIGMA_R_LQI)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
