import numpy as np
import pytest

from immkit.models import ca_model, cv_model, make_model_set
from immkit.simulation import PAPER_TRANSITION


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eig = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    return (q * eig) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def paper_set():
    return make_model_set([cv_model(), ca_model()], PAPER_TRANSITION)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
