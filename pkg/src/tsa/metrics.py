"""Invariant distances between data points.

All squared distances include the out-of-span part ``|(I - W W^T)(x - y)|^2``
because the group acts as the identity there.  Pairwise helpers take data
matrices with points in columns (D x N) and return (N_b, N_a) matrices with
rows indexed by the second argument, which is how the 1-NN harness uses
them (rows are queries).
"""

from __future__ import annotations

import numpy as np

from .inference import (
    bilinear_terms,
    harmonic_count,
    map_coupled,
    map_coupled_batch,
    pool_harmonics,
    posterior_coupled,
    stabilizer_representation,
)
from .toral import apply_coupled, subspace_coords


def _pair(basis, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.shape[0] != basis.D:
        raise ValueError(f"expected two vectors of length {basis.D}, got {x.shape} and {y.shape}")
    return x, y


def _complement_sq(basis, diff):
    proj = basis.W.T @ diff
    return max(float(diff @ diff - proj @ proj), 0.0)


def manifold_distance_maximal_sq(basis, x, y):
    x, y = _pair(basis, x, y)
    nu = np.linalg.norm(subspace_coords(basis, x).u, axis=1)
    nv = np.linalg.norm(subspace_coords(basis, y).u, axis=1)
    return float(np.sum((nu - nv) ** 2)) + _complement_sq(basis, x - y)


def manifold_distance_maximal(basis, x, y):
    """Exact orbit distance under the maximal torus."""
    return float(np.sqrt(manifold_distance_maximal_sq(basis, x, y)))


def hellinger_distance_sq(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"representations differ in length: {a.shape} vs {b.shape}")
    return 0.5 * float(np.sum((np.sqrt(a) - np.sqrt(b)) ** 2))


def hellinger_distance(a, b):
    """Hellinger distance between two stabilizer posteriors given their precisions."""
    return float(np.sqrt(hellinger_distance_sq(a, b)))


def manifold_distance_coupled_sq(basis, x, y):
    x, y = _pair(basis, x, y)
    s = map_coupled(posterior_coupled(basis, x, y))
    r = y - apply_coupled(basis, s, x)
    return float(r @ r)


def manifold_distance_coupled(basis, x, y):
    """Orbit distance under the one-parameter subgroup, aligning ``x`` onto ``y``."""
    return float(np.sqrt(manifold_distance_coupled_sq(basis, x, y)))


def _tangent_coefs(g11, g22, g12, r1, r2):
    """Minimizer ``(a, b)`` of ``|d + a t1 - b t2|^2`` and a non-degeneracy mask."""
    det = g11 * g22 - g12 * g12
    scale = np.maximum((g11 + g22) ** 2, 1e-300)
    full = det > 1e-12 * scale
    safe_det = np.where(full, det, 1.0)
    # normal equations for the combined tangent matrix [t1, -t2]
    alpha = (g12 * r2 - g22 * r1) / safe_det
    beta = (g11 * r2 - g12 * r1) / safe_det
    return alpha, beta, full


def _tangent_solve(g11, g22, g12, r1, r2, ed_sq):
    """Vectorized minimum of ``|d + a t1 - b t2|^2`` given Gram entries."""
    alpha, beta, full = _tangent_coefs(g11, g22, g12, r1, r2)
    # value at the stationary point of the quadratic
    two_sided = ed_sq + alpha * r1 - beta * r2
    out = np.where(full, two_sided, ed_sq)
    return np.maximum(out, 0.0)


def tangent_distance_sq(x, y, tx, ty):
    x, y, tx, ty = (np.asarray(a, dtype=float) for a in (x, y, tx, ty))
    d = x - y
    alpha, beta, full = _tangent_coefs(tx @ tx, ty @ ty, tx @ ty, tx @ d, ty @ d)
    if not full:
        return float(d @ d)
    # form the residual explicitly; the closed-form value cancels badly near 0
    r = d + alpha * tx - beta * ty
    return float(r @ r)


def tangent_distance(x, y, tx, ty):
    """Two-sided tangent distance ``min |(x + a tx) - (y + b ty)|``.

    Falls back to the Euclidean distance when the tangents are degenerate.
    """
    return float(np.sqrt(tangent_distance_sq(x, y, tx, ty)))


# ---------------------------------------------------------------------------
# Pairwise matrices
# ---------------------------------------------------------------------------


def pairwise_sq_euclidean(A, B):
    aa = np.sum(A * A, axis=0)
    bb = np.sum(B * B, axis=0)
    return np.maximum(bb[:, None] + aa[None, :] - 2.0 * (B.T @ A), 0.0)


def pairwise_sq_tangent(A, TA, B, TB):
    """Two-sided tangent distances between columns of ``B`` (rows) and ``A``."""
    ed = pairwise_sq_euclidean(A, B)
    g11 = np.sum(TA * TA, axis=0)[None, :]
    g22 = np.sum(TB * TB, axis=0)[:, None]
    g12 = TB.T @ TA
    # d = a - b
    r1 = np.sum(TA * A, axis=0)[None, :] - B.T @ TA
    r2 = TB.T @ A - np.sum(TB * B, axis=0)[:, None]
    return _tangent_solve(g11, g22, g12, r1, r2, ed)


def pairwise_sq_kappa(basis, A, B):
    """Squared Euclidean distance between ``sqrt(kappa)`` representations."""
    ka = np.sqrt(stabilizer_representation(basis, A))
    kb = np.sqrt(stabilizer_representation(basis, B))
    return pairwise_sq_euclidean(ka, kb)


def pairwise_sq_manifold_maximal(basis, A, B):
    na = np.linalg.norm(subspace_coords(basis, A).u, axis=1)
    nb = np.linalg.norm(subspace_coords(basis, B).u, axis=1)
    in_span = pairwise_sq_euclidean(na, nb)
    pa, pb = basis.W.T @ A, basis.W.T @ B
    outside = pairwise_sq_euclidean(A, B) - pairwise_sq_euclidean(pa, pb)
    return in_span + np.maximum(outside, 0.0)


def pairwise_sq_manifold_coupled(basis, A, B, chunk=16):
    """Coupled-model orbit distances, columns of ``A`` aligned onto columns of ``B``."""
    omega = basis.omega
    K = harmonic_count(omega)
    ua = subspace_coords(basis, A).u  # (J, 2, Na)
    ub = subspace_coords(basis, B).u
    aa = np.sum(A * A, axis=0)
    bb = np.sum(B * B, axis=0)
    full_dot = B.T @ A  # (Nb, Na)
    zero = omega == 0
    out = np.empty((B.shape[1], A.shape[1]))
    for start in range(0, B.shape[1], chunk):
        stop = min(start + chunk, B.shape[1])
        v = ub[:, :, start:stop]  # (J, 2, c)
        # terms[j, :, c, n] for x = column n of A and y = column c of B
        u4 = ua[:, :, None, :]
        v4 = v[:, :, :, None]
        terms = bilinear_terms(np.broadcast_to(u4, (basis.J, 2) + (stop - start, A.shape[1])),
                               np.broadcast_to(v4, (basis.J, 2) + (stop - start, A.shape[1])),
                               1.0)
        span_dot = terms[:, 0].sum(axis=0)
        static = full_dot[start:stop] - span_dot + terms[zero, 0].sum(axis=0)
        pooled = pool_harmonics(terms, omega, K)  # (K, 2, c, n)
        flat = np.moveaxis(pooled.reshape(K, 2, -1), 2, 0)
        _, best = map_coupled_batch(flat)
        cross = static + best.reshape(stop - start, A.shape[1])
        out[start:stop] = np.maximum(bb[start:stop, None] + aa[None, :] - 2.0 * cross, 0.0)
    return out
