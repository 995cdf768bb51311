"""Independent reference computations the tests check the library against."""

from itertools import combinations

import numpy as np


def simplex_project_bruteforce(z):
    """Exact Euclidean projection onto the simplex by support enumeration.

    Tries every nonempty support set, solves the equality-constrained
    projection on it, keeps the feasible candidate with the smallest
    distance to z.  Independent of the sorting-based threshold algorithm.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    n = len(z)
    best, best_obj = None, np.inf
    for size in range(1, n + 1):
        for support in combinations(range(n), size):
            s = list(support)
            shift = (z[s].sum() - 1.0) / size
            p = np.zeros(n)
            p[s] = z[s] - shift
            if p[s].min() < -1e-12:
                continue
            obj = float(((p - z) ** 2).sum())
            if obj < best_obj:
                best, best_obj = np.maximum(p, 0.0), obj
    return best


def simplex_project_bruteforce_batch(z):
    """Vectorized variant of the enumeration for speed in bulk checks."""
    z = np.asarray(z, dtype=np.float64).ravel()
    n = len(z)
    masks = ((np.arange(1, 2 ** n)[:, None] >> np.arange(n)) & 1).astype(bool)
    sizes = masks.sum(axis=1)
    shift = (np.where(masks, z, 0.0).sum(axis=1) - 1.0) / sizes
    p = np.where(masks, z - shift[:, None], 0.0)
    feasible = (p >= -1e-12).all(axis=1)
    obj = ((p - z) ** 2).sum(axis=1)
    obj[~feasible] = np.inf
    return np.maximum(p[np.argmin(obj)], 0.0)
