import numpy as np
import pytest

from flat.model import ModelConfig, init_params

TINY = ModelConfig(n_classes=2, d_e=8, hidden=8, d_c=4, res_blocks=2, heads=1, gat_hidden=8, gat_out=4)
SMALL = ModelConfig(n_classes=2, d_e=16, hidden=16, d_c=5, res_blocks=3, heads=2, gat_hidden=12, gat_out=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_params():
    return init_params(TINY, np.random.default_rng(7))


@pytest.fixture(scope="session")
def default_params():
    return init_params(ModelConfig(), np.random.default_rng(11))


# -- acceptance reporting: one line per criterion at the end of the run

_ACCEPT = {}


@pytest.fixture
def accept():
    def record(criterion, ok, detail=""):
        _ACCEPT[criterion] = (bool(ok), detail)
        print(f"[acceptance] {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPT:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPT, key=lambda s: (len(s.split()[0]), s)):
        ok, detail = _ACCEPT[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture(scope="session")
def trained():
    """Full-length (62000-step) model on the synthetic acceptance corpus, cached on disk."""
    from acceptance_support import trained_checkpoint

    return trained_checkpoint()
