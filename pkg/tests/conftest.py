import numpy as np
import pytest

from vcwtgs.model_core import Dataset


def make_dataset(seed, N, P, k=1, scale=1.0, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, P))
    beta = np.zeros(P)
    beta[:k] = scale
    Y = X @ beta + noise * rng.standard_normal(N)
    return Dataset.from_arrays(X, Y)


def zero_dataset(N, P, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset.from_arrays(np.zeros((N, P)), rng.standard_normal(N))


@pytest.fixture
def small_ds():
    return make_dataset(3, 20, 4, k=1)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print a one-line PASS/FAIL verdict for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
