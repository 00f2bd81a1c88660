"""Closed-form posterior inference over toroidal group elements.

For a pair ``(x, y)`` with subspace coordinates ``u_j = W_j^T x`` and
``v_j = W_j^T y`` the likelihood term of subspace ``j`` is
``exp(v_j^T R(phi_j) u_j / sigma^2)``, which is linear in
``(cos phi_j, sin phi_j)``.  A von Mises prior therefore stays von Mises
after the update, and in the coupled model (``phi_j = omega_j s``) a
generalized von Mises prior stays generalized von Mises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circular import (
    TWO_PI,
    GeneralizedVonMises,
    gvm_energy,
    nat_to_conv,
    vm_log_pdf,
    wrap_angle,
)
from .toral import subspace_coords


def bilinear_terms(u, v, sigma):
    """Likelihood natural parameters ``(u.v, u1 v2 - u2 v1) / sigma^2``.

    ``u`` and ``v`` have shape (J, 2, ...); the result has shape (J, 2, ...).
    """
    dot = u[:, 0] * v[:, 0] + u[:, 1] * v[:, 1]
    cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    return np.stack([dot, cross], axis=1) / sigma**2


def posterior_params(u, v, sigma, prior_eta=None):
    """Posterior natural parameters for each subspace (shape (J, 2))."""
    eta = bilinear_terms(np.asarray(u, float), np.asarray(v, float), sigma)
    if prior_eta is not None:
        eta = eta + np.asarray(prior_eta, dtype=float)
    return eta


@dataclass(frozen=True)
class TorusPosterior:
    """Product of J independent von Mises, natural parameters ``eta`` (J, 2)."""

    eta: np.ndarray

    @property
    def mu(self):
        return nat_to_conv(self.eta)[0]

    @property
    def kappa(self):
        return nat_to_conv(self.eta)[1]

    def log_pdf(self, phi):
        """Joint log density at angles ``phi`` (length J)."""
        return float(np.sum(vm_log_pdf(np.asarray(phi, float), self.eta)))


def _pair_coords(basis, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"x and y shapes differ: {x.shape} vs {y.shape}")
    if basis.sigma <= 0:
        raise ValueError("sigma must be positive")
    return subspace_coords(basis, x).u, subspace_coords(basis, y).u


def posterior_maximal(basis, x, y, prior=None):
    """Posterior over the maximal torus given one pair ``(x, y)``.

    ``prior`` holds per-subspace von Mises natural parameters (J, 2); None
    means uniform.
    """
    u, v = _pair_coords(basis, x, y)
    if u.ndim != 2:
        raise ValueError("posterior_maximal takes single vectors, not batches")
    return TorusPosterior(posterior_params(u, v, basis.sigma, prior))


def harmonic_count(omega, prior=None):
    K = int(np.max(np.abs(omega), initial=0))
    if prior is not None:
        K = max(K, prior.K)
    return max(K, 1)


def pool_harmonics(eta, omega, K):
    """Sum subspace parameters into GvM harmonics by weight ``|omega_k|``.

    ``eta`` has shape (J, 2, ...).  A negative weight flips the sine
    coefficient because ``R(-w s) = R(w s)^T``; zero-weight subspaces do not
    depend on ``s`` and are dropped.
    """
    omega = np.asarray(omega)
    pooled = np.zeros((K, 2) + eta.shape[2:])
    for k, w in enumerate(omega):
        if w == 0:
            continue
        h = abs(int(w)) - 1
        pooled[h, 0] += eta[k, 0]
        pooled[h, 1] += np.sign(w) * eta[k, 1]
    return pooled


def posterior_coupled(basis, x, y, prior=None):
    """Generalized von Mises posterior over the coupled parameter ``s``."""
    u, v = _pair_coords(basis, x, y)
    if u.ndim != 2:
        raise ValueError("posterior_coupled takes single vectors, not batches")
    K = harmonic_count(basis.omega, prior)
    pooled = pool_harmonics(bilinear_terms(u, v, basis.sigma), basis.omega, K)
    if prior is not None:
        pooled = pooled + prior.extended(K).eta_plus
    return GeneralizedVonMises(pooled)


def _energy_derivatives(s, eta_plus):
    """First and second derivative of the GvM energy at ``s``.

    ``eta_plus`` is (..., K, 2) and ``s`` has shape (...).
    """
    K = eta_plus.shape[-2]
    h = np.arange(1, K + 1)
    hs = h * s[..., None]
    c, sn = np.cos(hs), np.sin(hs)
    a, b = eta_plus[..., 0], eta_plus[..., 1]
    d1 = np.sum(h * (b * c - a * sn), axis=-1)
    d2 = -np.sum(h * h * (a * c + b * sn), axis=-1)
    return d1, d2


def _newton_refine(s, eta_plus, step_cap, iters=30):
    """Safeguarded Newton ascent on the GvM energy, steps capped at ``step_cap``."""
    s = np.array(s, dtype=float)
    for _ in range(iters):
        d1, d2 = _energy_derivatives(s, eta_plus)
        step = np.where(d2 < 0, -d1 / np.where(d2 < 0, d2, -1.0), np.sign(d1) * step_cap)
        step = np.clip(step, -step_cap, step_cap)
        s = s + step
        if np.all(np.abs(step) < 1e-15):
            break
    return s


def map_coupled(post, n_grid=4096, n_candidates=8):
    """Global mode of a GvM posterior in ``[0, 2*pi)``.

    Dense grid search followed by Newton refinement of the best few local
    maxima.  Ties (within 1e-12 in log density) go to the smallest angle.
    """
    eta = post.eta_plus if isinstance(post, GeneralizedVonMises) else np.asarray(post, float)
    if not np.any(eta):
        return 0.0
    grid = np.arange(n_grid) * (TWO_PI / n_grid)
    f = gvm_energy(grid, eta)
    is_peak = (f >= np.roll(f, 1)) & (f >= np.roll(f, -1))
    peaks = np.flatnonzero(is_peak)
    peaks = peaks[np.argsort(-f[peaks], kind="stable")[:n_candidates]]
    cand = _newton_refine(grid[peaks], np.broadcast_to(eta, (peaks.size,) + eta.shape),
                          step_cap=TWO_PI / n_grid)
    cand = wrap_angle(cand)
    vals = gvm_energy(cand, eta)
    best = vals.max()
    tied = cand[vals >= best - 1e-12]
    return float(tied.min())


def map_coupled_batch(eta_plus, n_grid=None):
    """Approximate MAP for many GvM posteriors at once.

    ``eta_plus`` has shape (M, K, 2).  The energy is evaluated on a grid
    through an inverse real FFT, then the best grid point is polished with
    Newton steps.  Returns ``(s_map, energy_at_map)``.
    """
    eta_plus = np.asarray(eta_plus, dtype=float)
    M, K, _ = eta_plus.shape
    n = n_grid or max(64, 16 * K)
    spectrum = np.zeros((M, n // 2 + 1), dtype=complex)
    spectrum[:, 1:K + 1] = (eta_plus[..., 0] - 1j * eta_plus[..., 1]) * (n / 2)
    f = np.fft.irfft(spectrum, n=n, axis=1)
    idx = np.argmax(f, axis=1)
    s0 = idx * (TWO_PI / n)
    s = _newton_refine(s0, eta_plus, step_cap=TWO_PI / n, iters=8)
    hs = np.arange(1, K + 1) * s[:, None]
    energy = np.sum(eta_plus[..., 0] * np.cos(hs) + eta_plus[..., 1] * np.sin(hs), axis=1)
    # Newton may only have improved on the grid value; guard anyway
    better = energy >= f[np.arange(M), idx]
    s = np.where(better, s, s0)
    energy = np.where(better, energy, f[np.arange(M), idx])
    return wrap_angle(s), energy


def stabilizer_representation(basis, x):
    """Invariant precisions ``kappa_j = |W_j^T x|^2 / sigma^2`` (square pooling)."""
    u = subspace_coords(basis, x).u
    return np.sum(u * u, axis=1) / basis.sigma**2
