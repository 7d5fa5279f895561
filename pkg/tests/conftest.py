import numpy as np
import pytest

from colora import autodiff as ad


def numeric_grad(f, arrays, i, h=1e-6):
    """Central differences of scalar ``f(*arrays)`` with respect to ``arrays[i]``."""
    x = arrays[i]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(*arrays)
        x[idx] = orig - h
        fm = f(*arrays)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)) + np.max(np.abs(b))))


def check_grad(build, arrays, tol=1e-4, seed=0):
    """Compare tape gradients of ``sum(build(*tensors) * W)`` against central differences.

    ``W`` is a fixed random weighting so every output element matters.
    """
    with ad.precision("float64"):
        arrays = [np.asarray(a, dtype=np.float64).copy() for a in arrays]
        with ad.no_tape():
            out_shape = build(*[ad.Tensor(a) for a in arrays]).shape
        w = np.random.default_rng(seed).standard_normal(out_shape)

        def f(*xs):
            with ad.no_tape():
                return float(np.sum(build(*[ad.Tensor(a) for a in xs]).data * w))

        ts = [ad.Tensor(a, requires_grad=True) for a in arrays]
        with ad.Tape() as tape:
            loss = ad.sum(ad.mul(build(*ts), ad.Tensor(w)))
        ad.backward(tape, loss)
        for i, t in enumerate(ts):
            num = numeric_grad(f, arrays, i)
            err = rel_err(t.grad, num)
            assert err < tol, f"input {i}: relative error {err:.3g}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
