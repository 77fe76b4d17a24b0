"""Reference computations the library is checked against.

Each one is deliberately independent of the code under test: dense
elimination for fill counts, finite differences for Jacobians, scipy's
sparse LU for linear solves and a Fourier series for duct flow.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse.linalg as spla


def fill_count(pattern, perm) -> int:
    """nnz(L+U) of the symmetrized pattern under ``perm`` by dense boolean elimination."""
    n = pattern.n_rows
    M = np.zeros((n, n), dtype=bool)
    inv = np.empty(n, dtype=np.int64)
    inv[np.asarray(perm)] = np.arange(n)
    M[inv[pattern.row_indices()], inv[pattern.col_idx]] = True
    M |= M.T
    np.fill_diagonal(M, True)
    below = 0
    for k in range(n):
        s = np.flatnonzero(M[k, k + 1:]) + k + 1
        below += s.size
        if s.size > 1:
            M[np.ix_(s, s)] = True
    return 2 * below + n


def fill_count_sets(adj: list[set], order) -> int:
    """Same count by explicit quotient-free elimination on adjacency sets (small graphs)."""
    adj = [set(a) for a in adj]
    pos = {v: i for i, v in enumerate(order)}
    below = 0
    for v in order:
        later = {u for u in adj[v] if pos[u] > pos[v]}
        below += len(later)
        for u in later:
            adj[u] |= later - {u}
    return 2 * below + len(order)


def finite_difference_jacobian_columns(F, X, cols, h=1e-6):
    """Central differences of ``F`` along unit vectors ``cols``; step scaled by ``|X_j|``."""
    out = []
    for j in cols:
        step = h * max(1.0, abs(X[j]))
        Xp, Xm = X.copy(), X.copy()
        Xp[j] += step
        Xm[j] -= step
        out.append((F(Xp) - F(Xm)) / (2 * step))
    return np.array(out).T


def direct_solve(A, b):
    """Monolithic reference solve with scipy's SuperLU."""
    return spla.splu(A.to_scipy().tocsc()).solve(np.asarray(b, dtype=float))


def duct_peak_ratio(aspect: float = 1.0, terms: int = 200) -> float:
    """``u_max / u_mean`` of fully developed laminar flow in a rectangular duct.

    Series solution for the duct ``|y| <= a``, ``|z| <= b`` with ``b/a = aspect``
    (odd terms only).
    """
    a, b = 1.0, aspect
    i = np.arange(1, 2 * terms, 2, dtype=float)
    c = i * np.pi / (2 * a)
    x = c * b
    sech = 2 * np.exp(-x) / (1 + np.exp(-2 * x))
    umax = (16 * a * a / np.pi ** 3) * np.sum((-1.0) ** ((i - 1) / 2) * (1 - sech) / i ** 3)
    umean = (a * a / 3) * (1 - (192 * a / (np.pi ** 5 * b)) * np.sum(np.tanh(x) / i ** 5))
    return float(umax / umean)


def empirical_orders(norms) -> list[float]:
    """Convergence orders ``log(e_{k+1}/e_k) / log(e_k/e_{k-1})`` of a decreasing sequence."""
    e = np.log(np.asarray(norms, dtype=float))
    d = np.diff(e)
    return [float(d[k + 1] / d[k]) for k in range(len(d) - 1)]
