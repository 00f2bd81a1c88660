"""The discrete Fourier transform as a toroidal model.

With sinusoid filters ``cos(2 pi j n / D)`` and ``sin(-2 pi j n / D)`` the
subspace coordinates of a signal are the real and imaginary parts of its
DFT coefficients.  The posterior for the transformation taking the
reference ``(1, 0)`` in every subspace to the signal (uniform prior,
``sigma = 1``) then has precision ``|X_j|`` and mean ``arg X_j``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .circular import nat_to_conv, wrap_angle
from .inference import posterior_params
from .toral import ToralBasis


def frequencies(D):
    """Frequencies with a genuine sine/cosine pair (no DC, no Nyquist)."""
    return np.arange(1, (D - 1) // 2 + 1)


def sinusoid_filters(D):
    """Unnormalized D x 2J filter matrix, pair ``j`` = (cos, -sin) at frequency ``j``."""
    n = np.arange(D)
    cols = []
    for j in frequencies(D):
        cols.append(np.cos(2 * np.pi * j * n / D))
        cols.append(np.sin(-2 * np.pi * j * n / D))
    return np.column_stack(cols) if cols else np.zeros((D, 0))


def dft_basis(D, sigma=1.0):
    """Orthonormal sinusoid basis with weights ``omega_j = j``.

    Under a cyclic advance ``x[n] -> x[n + t]`` the coordinates of
    frequency ``j`` rotate by ``2 pi j t / D``.
    """
    W = sinusoid_filters(D) * np.sqrt(2.0 / D)
    return ToralBasis(W, frequencies(D), sigma)


def dft_posterior(x):
    """``(kappa_hat, mu_hat)`` of the transformation from the reference to ``x``."""
    x = np.asarray(x, dtype=float)
    u_x = (sinusoid_filters(x.shape[0]).T @ x).reshape(-1, 2)
    reference = np.tile([1.0, 0.0], (u_x.shape[0], 1))
    mu, kappa = nat_to_conv(posterior_params(reference, u_x, 1.0))
    return np.atleast_1d(kappa), np.atleast_1d(mu)


class DftReport(NamedTuple):
    D: int
    kappa: np.ndarray
    mu: np.ndarray
    modulus: np.ndarray
    phase: np.ndarray
    max_kappa_dev: float
    max_phase_dev: float


def dft_check(x):
    """Compare posterior precision/mean with an FFT's modulus/phase."""
    x = np.asarray(x, dtype=float)
    D = x.shape[0]
    kappa, mu = dft_posterior(x)
    X = np.fft.fft(x)[frequencies(D)]
    modulus = np.abs(X)
    phase = wrap_angle(np.angle(X))
    kdev = float(np.max(np.abs(kappa - modulus), initial=0.0))
    # phase is undefined for vanishing coefficients
    defined = modulus > 1e-8 * max(1.0, float(np.max(modulus, initial=0.0)))
    diff = np.abs(np.angle(np.exp(1j * (mu - phase))))
    pdev = float(np.max(diff[defined], initial=0.0))
    return DftReport(D, kappa, mu, modulus, phase, kdev, pdev)
