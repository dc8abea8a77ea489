"""Integer-lattice helpers: l1 balls and spheres, LLL reduction, matrix norms."""

from functools import lru_cache

import numpy as np

from .errors import NotUnimodular, ReductionFailure


@lru_cache(maxsize=64)
def _ball_cached(K, d):
    rng = np.arange(-K, K + 1)
    grids = np.meshgrid(*([rng] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    pts = pts[np.abs(pts).sum(axis=1) <= K]
    # meshgrid with ij indexing already yields lexicographic order
    pts.setflags(write=False)
    return pts


def l1_ball(K, d):
    """All k in Z^d with |k|_1 <= K, in lexicographic order (read-only array)."""
    return _ball_cached(int(K), int(d))


@lru_cache(maxsize=4096)
def _sphere_cached(q, m):
    if m == 1:
        out = np.array([[q]], dtype=np.int64)
    else:
        rows = []
        for a in range(q, 0, -1):
            rest = q - a
            if rest == 0:
                rows.append([a] + [0] * (m - 1))
                continue
            for tail in _full_sphere(rest, m - 1):
                rows.append([a] + list(tail))
        for tail in _sphere_cached(q, m - 1):
            rows.append([0] + list(tail))
        out = np.array(rows, dtype=np.int64)
    out.setflags(write=False)
    return out


def _full_sphere(q, m):
    half = _sphere_cached(q, m)
    return np.concatenate([half, -half])


def canonical_sphere(q, m):
    """Vectors of Z^m with |k|_1 = q whose first nonzero entry is positive."""
    if q < 1:
        raise ValueError("sphere radius must be positive")
    return _sphere_cached(int(q), int(m))


def opnorm1(A):
    """Operator norm induced by l1: maximum column sum of |A|."""
    return float(np.max(np.sum(np.abs(np.asarray(A, dtype=float)), axis=0)))


def int_inverse(T):
    """Exact inverse of an integer matrix with determinant +-1."""
    T = np.asarray(T)
    if not np.issubdtype(T.dtype, np.integer):
        if not np.allclose(T, np.rint(T)):
            raise NotUnimodular("matrix has non-integer entries")
        T = np.rint(T).astype(np.int64)
    det = int(round(np.linalg.det(T.astype(float))))
    if abs(det) != 1:
        raise NotUnimodular(f"det = {det}")
    inv = np.rint(np.linalg.inv(T.astype(float))).astype(np.int64)
    if not np.array_equal(inv @ T, np.eye(len(T), dtype=np.int64)):
        raise NotUnimodular("inverse is not integral")
    return inv


def _gram_schmidt(B):
    n = B.shape[0]
    Bs = np.zeros_like(B)
    mu = np.zeros((n, n))
    for i in range(n):
        v = B[i].copy()
        for j in range(i):
            mu[i, j] = B[i] @ Bs[j] / (Bs[j] @ Bs[j])
            v -= mu[i, j] * Bs[j]
        Bs[i] = v
    return Bs, mu


def lll(B, delta=0.99, max_swaps=10000):
    """LLL-reduce the rows of a real basis.

    Returns (U, R) with U unimodular integer and R = U @ B reduced.
    """
    B = np.array(B, dtype=float)
    n = B.shape[0]
    U = np.eye(n, dtype=np.int64)
    Bs, mu = _gram_schmidt(B)
    k, swaps = 1, 0
    while k < n:
        for j in range(k - 1, -1, -1):
            c = int(np.rint(mu[k, j]))
            if c:
                B[k] -= c * B[j]
                U[k] -= c * U[j]
                Bs, mu = _gram_schmidt(B)
        if Bs[k] @ Bs[k] >= (delta - mu[k, k - 1] ** 2) * (Bs[k - 1] @ Bs[k - 1]):
            k += 1
        else:
            B[[k, k - 1]] = B[[k - 1, k]]
            U[[k, k - 1]] = U[[k - 1, k]]
            Bs, mu = _gram_schmidt(B)
            k = max(k - 1, 1)
            swaps += 1
            if swaps > max_swaps:
                raise ReductionFailure("LLL exceeded the swap budget")
    return U, B
