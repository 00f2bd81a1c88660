"""Circular distributions used by the toroidal model.

Von Mises distributions are handled in two parameterizations: conventional
``(mu, kappa)`` and natural ``eta = kappa * (cos mu, sin mu)``.  The
generalized von Mises (GvM) over a scalar angle ``s`` has ``K`` harmonics,

    p(s) = exp(sum_h eta_h . (cos hs, sin hs)) / Z+,

and its normalizer ``Z+`` is evaluated by periodic trapezoid quadrature.

The modified Bessel functions I0 and I1 are implemented here with a power
series for small arguments and the large-argument asymptotic expansion above
that, both in exponentially scaled form so nothing overflows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi
LOG_TWO_PI = np.log(TWO_PI)

_SERIES_MAX_X = 15.0
_SERIES_TERMS = 64
_ASYMPTOTIC_TERMS = 40


def wrap_angle(a):
    """Reduce angles to ``[0, 2*pi)``."""
    a = np.mod(a, TWO_PI)
    # np.mod can return exactly 2*pi for tiny negative inputs
    return np.where(a >= TWO_PI, 0.0, a)


# ---------------------------------------------------------------------------
# Modified Bessel functions
# ---------------------------------------------------------------------------


def _series_scaled(x, order):
    """exp(-x) * I_order(x) from the power series, for 0 <= x <= 15."""
    q = 0.25 * x * x
    if order == 0:
        term = np.ones_like(x)
    else:
        term = 0.5 * x
    total = term.copy()
    for m in range(1, _SERIES_TERMS):
        term = term * q / (m * (m + order))
        total = total + term
    return total * np.exp(-x)


def _asymptotic_scaled(x, order):
    """exp(-x) * I_order(x) from the Hankel expansion, for large x."""
    mu = 4.0 * order * order
    inv8x = 1.0 / (8.0 * x)
    term = np.ones_like(x)
    total = term.copy()
    smallest = np.abs(term)
    done = np.zeros(x.shape, dtype=bool)
    for k in range(1, _ASYMPTOTIC_TERMS):
        term = term * (-(mu - (2 * k - 1) ** 2)) * inv8x / k
        mag = np.abs(term)
        # stop each entry once the divergent tail starts to grow
        done |= mag > smallest
        total = np.where(done, total, total + term)
        smallest = np.minimum(smallest, mag)
    return total / np.sqrt(TWO_PI * x)


def _scaled(x, order):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("Bessel functions are only provided for x >= 0")
    flat = np.atleast_1d(x).ravel()
    out = np.empty_like(flat)
    small = flat <= _SERIES_MAX_X
    if small.any():
        out[small] = _series_scaled(flat[small], order)
    if (~small).any():
        out[~small] = _asymptotic_scaled(flat[~small], order)
    out = out.reshape(np.shape(x))
    return out if out.ndim else out[()]


def bessel_i0e(x):
    """Exponentially scaled ``exp(-x) I0(x)``."""
    return _scaled(x, 0)


def bessel_i1e(x):
    """Exponentially scaled ``exp(-x) I1(x)``."""
    return _scaled(x, 1)


def bessel_i0(x):
    return bessel_i0e(x) * np.exp(x)


def bessel_i1(x):
    return bessel_i1e(x) * np.exp(x)


def log_bessel_i0(x):
    """``log I0(x)`` without overflow for large ``x``."""
    return np.log(bessel_i0e(x)) + np.asarray(x, dtype=float)


def bessel_ratio_i1_i0(x):
    """``I1(x) / I0(x)``; tends to 1 as ``x`` grows."""
    return bessel_i1e(x) / bessel_i0e(x)


def bessel_ratio_over_x(x):
    """``I1(x) / (x I0(x))``, continuous at 0 where it equals 1/2."""
    x = np.asarray(x, dtype=float)
    tiny = x < 1e-8
    safe = np.where(tiny, 1.0, x)
    r = bessel_ratio_i1_i0(safe) / safe
    return np.where(tiny, 0.5 - x * x / 16.0, r)


# ---------------------------------------------------------------------------
# Von Mises
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VonMisesConv:
    mu: float
    kappa: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError(f"kappa must be nonnegative, got {self.kappa}")
        object.__setattr__(self, "mu", float(wrap_angle(self.mu)))


def conv_to_nat(mu, kappa):
    """Natural parameters ``kappa * (cos mu, sin mu)``; last axis has size 2."""
    mu = np.asarray(mu, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    return np.stack([kappa * np.cos(mu), kappa * np.sin(mu)], axis=-1)


def nat_to_conv(eta):
    """Return ``(mu, kappa)`` from natural parameters (last axis of size 2).

    ``eta = 0`` maps to ``(0, 0)``, the uniform distribution.
    """
    eta = np.asarray(eta, dtype=float)
    kappa = np.hypot(eta[..., 0], eta[..., 1])
    mu = wrap_angle(np.arctan2(eta[..., 1], eta[..., 0]))
    mu = np.where(kappa == 0, 0.0, mu)
    if kappa.ndim == 0:
        return float(mu), float(kappa)
    return mu, kappa


def vm_log_pdf(phi, eta):
    """Log density of a von Mises with natural parameters ``eta``."""
    eta = np.asarray(eta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    kappa = np.hypot(eta[..., 0], eta[..., 1])
    return (
        eta[..., 0] * np.cos(phi)
        + eta[..., 1] * np.sin(phi)
        - LOG_TWO_PI
        - log_bessel_i0(kappa)
    )


def vm_sample(mu, kappa, size=None, rng=None):
    """Draw von Mises samples by Best-Fisher rejection.

    ``rng`` is a seed or a ``numpy.random.Generator``; the caller owns its
    state.  Samples are returned in ``[0, 2*pi)``.
    """
    rng = np.random.default_rng(rng)
    n = 1 if size is None else int(np.prod(size))
    if kappa < 1e-8:
        out = rng.uniform(0.0, TWO_PI, n)
    else:
        tau = 1.0 + np.sqrt(1.0 + 4.0 * kappa * kappa)
        rho = (tau - np.sqrt(2.0 * tau)) / (2.0 * kappa)
        r = (1.0 + rho * rho) / (2.0 * rho)
        out = np.empty(n)
        filled = 0
        while filled < n:
            m = max(2 * (n - filled), 16)
            u1, u2, u3 = rng.uniform(size=(3, m))
            z = np.cos(np.pi * u1)
            f = (1.0 + r * z) / (r + z)
            c = kappa * (r - f)
            accept = (c * (2.0 - c) - u2 > 0) | (np.log(c / u2) + 1.0 - c >= 0)
            theta = np.sign(u3[accept] - 0.5) * np.arccos(f[accept])
            take = min(theta.size, n - filled)
            out[filled:filled + take] = theta[:take]
            filled += take
        out = out + mu
    out = wrap_angle(out)
    if size is None:
        return float(out[0])
    return out.reshape(size)


# ---------------------------------------------------------------------------
# Generalized von Mises
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneralizedVonMises:
    """GvM over a scalar angle with natural parameters ``eta_plus`` of shape (K, 2).

    Row ``h-1`` holds the coefficients of ``(cos hs, sin hs)``.
    """

    eta_plus: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta_plus, dtype=float)
        if eta.ndim != 2 or eta.shape[1] != 2 or eta.shape[0] < 1:
            raise ValueError(f"eta_plus must have shape (K, 2) with K >= 1, got {eta.shape}")
        object.__setattr__(self, "eta_plus", eta)

    @classmethod
    def from_conventional(cls, mu_plus, kappa_plus):
        return cls(conv_to_nat(mu_plus, kappa_plus))

    @classmethod
    def uniform(cls, K=1):
        return cls(np.zeros((K, 2)))

    @property
    def K(self):
        return self.eta_plus.shape[0]

    @property
    def mu_plus(self):
        return nat_to_conv(self.eta_plus)[0]

    @property
    def kappa_plus(self):
        return nat_to_conv(self.eta_plus)[1]

    def extended(self, K):
        """Copy padded with zero harmonics up to ``K``."""
        if K <= self.K:
            return self
        pad = np.zeros((K - self.K, 2))
        return GeneralizedVonMises(np.vstack([self.eta_plus, pad]))

    def energy(self, s):
        """Unnormalized log density ``eta+ . T+(s)``."""
        return gvm_energy(s, self.eta_plus)

    def log_normalizer(self):
        return gvm_log_normalizer(self.eta_plus)

    def log_pdf(self, s):
        return gvm_log_pdf(s, self)


def gvm_energy(s, eta_plus):
    """``sum_h eta_h1 cos(hs) + eta_h2 sin(hs)``.

    ``eta_plus`` has shape (..., K, 2) and the result has shape
    (..., *s.shape).
    """
    eta_plus = np.asarray(eta_plus, dtype=float)
    s = np.asarray(s, dtype=float)
    K = eta_plus.shape[-2]
    hs = np.arange(1, K + 1)[:, None] * s.ravel()[None, :]
    out = eta_plus[..., 0] @ np.cos(hs) + eta_plus[..., 1] @ np.sin(hs)
    return out.reshape(eta_plus.shape[:-2] + s.shape)


def _trapezoid_log_normalizer(eta_plus, n):
    grid = np.arange(n) * (TWO_PI / n)
    f = gvm_energy(grid, eta_plus)
    top = f.max(axis=-1)
    return top + np.log(np.exp(f - top[..., None]).sum(axis=-1) * (TWO_PI / n))


def gvm_log_normalizer(eta_plus, n_start=256, n_max=65536, tol=1e-13):
    """``log Z+ = log int_0^{2 pi} exp(eta+ . T+(s)) ds``.

    Periodic trapezoid rule, nodes doubled until successive estimates agree
    to ``tol`` (absolute) or ``n_max`` is reached.  Accepts a
    ``GeneralizedVonMises`` or natural parameters of shape (..., K, 2).
    """
    if isinstance(eta_plus, GeneralizedVonMises):
        eta_plus = eta_plus.eta_plus
    eta_plus = np.asarray(eta_plus, dtype=float)
    n = max(n_start, 4 * eta_plus.shape[-2] + 4)
    prev = _trapezoid_log_normalizer(eta_plus, n)
    while n < n_max:
        n *= 2
        cur = _trapezoid_log_normalizer(eta_plus, n)
        if np.all(np.abs(cur - prev) <= tol):
            prev = cur
            break
        prev = cur
    return prev if np.ndim(prev) else float(prev)


def gvm_log_pdf(s, g):
    """Log density of the GvM ``g`` at angle(s) ``s``."""
    if not isinstance(g, GeneralizedVonMises):
        g = GeneralizedVonMises(g)
    return gvm_energy(s, g.eta_plus) - gvm_log_normalizer(g.eta_plus)
