import numpy as np
import pytest
import scipy.sparse as sp

from nysopt.data import Dataset


def random_spsd(rng, d, rank, scale=1.0):
    A = rng.standard_normal((d, rank)) * scale
    H = A @ A.T
    return 0.5 * (H + H.T)


def random_dataset(rng, n, d, density=0.3):
    X = sp.random(n, d, density=density, format="csr", random_state=rng, data_rvs=rng.standard_normal)
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return Dataset(X, y)


def dense_dataset(X, y):
    return Dataset(sp.csr_matrix(np.asarray(X, dtype=float)), np.asarray(y, dtype=float))


def fd_grad(model, data, w, batch=None):
    """Central differences of the loss, step h = 1e-6 (1 + ||w||)."""
    h = 1e-6 * (1 + np.linalg.norm(w))
    g = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (model.loss(data, w + e, batch) - model.loss(data, w - e, batch)) / (2 * h)
    return g


def fd_hessian_columns(model, data, w, omega):
    h = 1e-5 * (1 + np.linalg.norm(w))
    cols = []
    for j in omega:
        e = np.zeros_like(w)
        e[j] = h
        cols.append((model.grad(data, w + e) - model.grad(data, w - e)) / (2 * h))
    return np.column_stack(cols)


def away_from_kink(model, data, w):
    if model.kind != "l2svm":
        return True
    margins = data.y * (data.X @ w)
    return np.min(np.abs(margins - 1.0)) > 1e-3


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_data(rng):
    return random_dataset(rng, 60, 12, density=0.5)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the summary hook prints them all."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def report(number, ok, detail):
        line = f"CRITERION {number:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        lines[number] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
