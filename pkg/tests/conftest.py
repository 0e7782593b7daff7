import numpy as np
import pytest

from shapeunfold.forward import ResolutionParams, build_forward_tables, response_matrix, smeared_means
from shapeunfold.sampler import sample_counts
from shapeunfold.smeared_set import build_box
from shapeunfold.spectrum import BinGrid, IntensityModel, true_bin_means

FIXED_SEED = 2016


@pytest.fixture(scope="session")
def grid():
    return BinGrid.uniform(400.0, 1000.0, 30)


@pytest.fixture(scope="session")
def resolution():
    return ResolutionParams()


@pytest.fixture(scope="session")
def jet():
    return IntensityModel.inclusive_jet()


@pytest.fixture(scope="session")
def tables(resolution, grid):
    return build_forward_tables(resolution, grid, grid)


@pytest.fixture(scope="session")
def mu_jet(jet, resolution, grid):
    return smeared_means(jet, resolution, grid, (400.0, 1000.0))


@pytest.fixture(scope="session")
def lam_jet(jet, grid):
    return true_bin_means(jet, grid)


@pytest.fixture(scope="session")
def jet_counts(mu_jet):
    return sample_counts(mu_jet, FIXED_SEED).counts


@pytest.fixture(scope="session")
def jet_box(jet_counts):
    return build_box(jet_counts, 0.05)


@pytest.fixture(scope="session")
def mc_response(resolution, grid):
    mc = IntensityModel.inclusive_jet(n0=5.5e19, alpha=6.0, beta=12.0)
    return response_matrix(mc, resolution, grid, grid), true_bin_means(mc, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
