import numpy as np
import pytest

from t1diff import numerics as nx


def numeric_grad(loss_fn, tensors, indices, h=1e-5):
    """Central differences of a scalar loss at selected (tensor, flat index) pairs."""
    out = []
    for ti, fi in indices:
        flat = tensors[ti].data.reshape(-1)
        old = flat[fi]
        flat[fi] = old + h
        up = float(loss_fn().data)
        flat[fi] = old - h
        down = float(loss_fn().data)
        flat[fi] = old
        out.append((up - down) / (2 * h))
    return np.array(out)


def analytic_grad(loss_fn, tensors, indices):
    for t in tensors:
        t.grad = None
    nx.backward(loss_fn(), tensors)
    return np.array([tensors[ti].grad.reshape(-1)[fi] for ti, fi in indices])


def rel_error(a, b, floor=1e-6):
    return np.max(np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b))))


def gradcheck(loss_fn, tensors, indices=None, h=1e-5):
    if indices is None:
        indices = [(i, j) for i, t in enumerate(tensors) for j in range(t.size)]
    a = analytic_grad(loss_fn, tensors, indices)
    n = numeric_grad(loss_fn, tensors, indices, h)
    return rel_error(a, n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _float64():
    with nx.precision(np.float64):
        yield


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
