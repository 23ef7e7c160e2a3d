import numpy as np
import pytest


def central_diff(fn, arrays, h=1e-4):
    """Central finite differences of a scalar function of several arrays.

    ``fn`` takes no arguments and reads the (mutated in place) arrays;
    returns one gradient array per input. Everything runs in float64.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            mi = it.multi_index
            orig = a[mi]
            a[mi] = orig + h
            fp = fn()
            a[mi] = orig - h
            fm = fn()
            a[mi] = orig
            g[mi] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-3):
    """Worst relative disagreement, with a floor so near-zero entries
    compare absolutely (finite differences carry ~1e-8 noise of their own)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
