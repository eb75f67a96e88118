import sys

import numpy as np
import pytest

from tgn import diffnum as dn


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x`` (edited in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor: float = 1e-9) -> float:
    """``|a - b| / max(|a|, |b|)`` over whole arrays.

    Gradients that vanish analytically (both norms below ``floor``) compare
    equal; their finite differences are pure rounding noise.
    """
    a, b = np.ravel(a).astype(float), np.ravel(b).astype(float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom < floor else float(np.linalg.norm(a - b) / denom)


def check_grads(loss_fn, tensors, h: float = 1e-5) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    ``loss_fn`` rebuilds the scalar loss from the current tensor values.
    """
    for t in tensors:
        t.zero_grad()
    dn.backward(loss_fn())
    worst = 0.0
    for t in tensors:
        numeric = numeric_grad(lambda: float(loss_fn().data), t.data, h)
        worst = max(worst, rel_error(t.grad, numeric))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
