import numpy as np
import pytest

from oocl.oracle import SynthSpec, gen_synth


def standardize(X):
    X = np.asarray(X, dtype=np.float64)
    return (X - X.mean(axis=0)) / X.std(axis=0)


def synth(n, p, seed=0, family="gaussian", n_true=None):
    spec = SynthSpec(n=n, p=p, n_true=min(20, p) if n_true is None else n_true,
                     family=family, seed=seed)
    return gen_synth(spec)


@pytest.fixture
def small_gauss():
    m, y, _ = synth(60, 40, seed=11)
    return m, y


@pytest.fixture
def small_binom():
    m, y, _ = synth(80, 30, seed=12, family="binomial")
    return m, y


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
