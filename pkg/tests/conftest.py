import numpy as np
import pytest

from momenthd.tensor import Tape, Tensor


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Finite-difference gradient of scalar f wrt array x, entry by entry."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def analytic_grad(build, x: Tensor) -> np.ndarray:
    """Backward pass through `build()`, returning x's gradient."""
    x.grad = None
    with Tape() as tape:
        loss = build()
        tape.backward(loss)
    return x.grad.copy()


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
