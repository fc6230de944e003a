import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from covadj.dgm import CovariateSpec, DgmSpec
from covadj.inference.fit import SamplerConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines are collected here and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


SIM_COVARIATES = (
    CovariateSpec("x1", "bernoulli", p=0.5),
    CovariateSpec("x2", "bernoulli", p=0.5),
    CovariateSpec("x3", "normal"),
    CovariateSpec("x5", "normal"),
    CovariateSpec("x6", "bernoulli", p=0.5, role="noise"),
    CovariateSpec("x7", "normal", role="noise"),
    CovariateSpec("x8", "normal", role="noise"),
)
SIM_TERMS = ("x1", "x2", "x3", "x3^2", "x5")
SIM_BETA = (1.0, -0.5, 1.0, -0.1, 0.5)


def sim_dgm(endpoint: str, **kw) -> DgmSpec:
    base = dict(continuous={"sigma": 1.0}, binary={"p_ctr": 0.3, "beta0": -1.26},
                tte={"lam": 0.05})[endpoint]
    base.update(kw)
    return DgmSpec(endpoint, SIM_COVARIATES, SIM_TERMS, SIM_BETA, **base)


@pytest.fixture
def rng():
    return np.random.default_rng(20230)


@pytest.fixture
def quick_sampler():
    return SamplerConfig(chains=3, warmup=400, keep=400)
