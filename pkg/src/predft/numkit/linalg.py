"""Non-differentiable linear algebra: SPD solves, PCA, column-wise Pearson r."""

import numpy as np
from scipy.linalg import solve_triangular


class NotSPDError(np.linalg.LinAlgError):
    def __init__(self, pivot, value):
        super().__init__(f"matrix is not positive definite: pivot {pivot} is {value:.3e}")
        self.pivot = pivot


def cholesky(a):
    """Lower Cholesky factor; raises NotSPDError naming the failing pivot."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("matrix is not symmetric")
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0:
            raise NotSPDError(j, d)
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def solve_spd(a, b):
    """Solve ``a @ x = b`` for symmetric positive definite ``a``."""
    b = np.asarray(b, dtype=np.float64)
    vec = b.ndim == 1
    if vec:
        b = b[:, None]
    L = cholesky(a)
    if b.shape[0] != L.shape[0]:
        raise ValueError(f"rhs has {b.shape[0]} rows, matrix has {L.shape[0]}")
    y = solve_triangular(L, b, lower=True)
    x = solve_triangular(L.T, y, lower=False)
    return x[:, 0] if vec else x


def pca_reduce(x, k):
    """Project centred rows of ``x`` onto the top ``k`` principal axes.

    Returns ``(projection p×k, reduced n×k, explained_variance)``. Component
    signs are fixed so the largest-magnitude loading of each axis is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    n, p = x.shape
    if not 1 <= k <= min(n, p):
        raise ValueError(f"k={k} must lie in [1, {min(n, p)}]")
    xc = x - x.mean(axis=0)
    if not np.any(xc):
        raise ValueError("all columns are constant")
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:k]
    flip = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
    comps = comps * flip[:, None]
    proj = comps.T
    var = s[:k] ** 2 / max(n - 1, 1)
    return proj, xc @ proj, var


def pearson_columns(a, b):
    """Per-column Pearson correlation; zero-variance columns give 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None] if b.ndim == 1 else b
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    num = (ac * bc).sum(axis=0)
    den = np.sqrt((ac * ac).sum(axis=0) * (bc * bc).sum(axis=0))
    scale = np.maximum(np.abs(a).max(axis=0), np.abs(b).max(axis=0))
    ok = den > (1e-12 * np.maximum(scale, 1e-300)) ** 2 * a.shape[0]
    r = np.zeros(a.shape[1])
    r[ok] = num[ok] / den[ok]
    return np.clip(r, -1.0, 1.0)
