import numpy as np
import pytest

from autofed import tensor as T


def finite_difference_check(loss_fn, tensors, h=1e-5, rel_tol=1e-4, abs_floor=1e-7):
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must rebuild the graph from scratch on every call and return a
    scalar Tensor; `tensors` are the leaves to perturb (their .data is
    mutated in place during probing).
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    T.backward(loss)
    for t in tensors:
        assert t.grad is not None, "no gradient reached a tracked tensor"
        flat = t.data.ravel()
        grad = t.grad.ravel()
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + h
            up = loss_fn().item()
            flat[idx] = old - h
            down = loss_fn().item()
            flat[idx] = old
            fd = (up - down) / (2 * h)
            if abs(grad[idx] - fd) < abs_floor:
                continue  # below finite-difference noise
            denom = max(abs(fd), abs(grad[idx]))
            assert abs(grad[idx] - fd) / denom < rel_tol, (
                f"gradient mismatch at element {idx}: analytic {grad[idx]}, "
                f"finite-difference {fd}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
