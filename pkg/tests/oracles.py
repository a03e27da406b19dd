"""Independent reference implementations used by the tests.

Nothing here imports the package under test.
"""

import itertools

import numpy as np

GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def sort_and_average(pain, k):
    """Shared top-k: (y_np, y_p, S) from a plain Python sort."""
    order = sorted(range(len(pain)), key=lambda i: (-pain[i], i))[:k]
    y_p = sum(pain[i] for i in order) / k
    y_np = sum(1.0 - pain[i] for i in order) / k
    return y_np, y_p, order


def independent_top_k(pain, k):
    no_pain = [1.0 - p for p in pain]
    top_p = sorted(pain, reverse=True)[:k]
    top_np = sorted(no_pain, reverse=True)[:k]
    return sum(top_np) / k, sum(top_p) / k


def grid_matrices(max_n=6):
    for n in range(1, max_n + 1):
        for pain in itertools.product(GRID, repeat=n):
            yield list(pain)


def per_clip(pain):
    p = np.asarray(pain, dtype=np.float64)
    return np.stack([1.0 - p, p], axis=1)


def central_differences(f, x, eps=1e-6):
    """Gradient of scalar ``f`` at flat float64 ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        g.flat[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-30))
