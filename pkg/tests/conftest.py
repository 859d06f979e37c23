import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from dasmc.models import ModelParams, simulate_alignment  # noqa: E402
from dasmc.tree import sample_random_tree  # noqa: E402


def taxa(n):
    return [f"t{i}" for i in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    """6 taxa, 300 sites simulated under K2P(kappa=2)."""
    r = np.random.default_rng(7)
    truth = sample_random_tree(taxa(6), 10.0, r)
    aln = simulate_alignment(truth, ModelParams.k2p(2.0), 300, r)
    return truth, aln


@pytest.fixture(scope="session")
def pilot12():
    """Logged pilot run on a simulated 12-taxon K2P alignment."""
    from dasmc.calibration import run_pilot
    from dasmc.problem import PhyloProblem
    from dasmc.smc import SMCConfig

    r = np.random.default_rng(12)
    truth = sample_random_tree(taxa(12), 10.0, r)
    aln = simulate_alignment(truth, ModelParams.k2p(2.0), 500, r)
    problem = PhyloProblem(aln, "K2P")
    log, result = run_pilot(problem, SMCConfig(n_particles=30, alpha=0.98, seed=1))
    return problem, log, result


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
