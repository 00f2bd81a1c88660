"""Marginal likelihood, its gradient, SGD training and weight estimation.

With the complement of ``span(W)`` passed through unchanged, the
uncoupled model's marginal likelihood is

    log p(y|x) = -(|x|^2 + |y|^2 - 2 y^T (I - W W^T) x) / (2 sigma^2)
                 - (D/2) log(2 pi sigma^2)
                 + sum_j [log I0(kappa_hat_j) - log I0(kappa_j)]

where ``kappa_hat_j`` is the posterior precision of subspace ``j``.  For a
complete basis the cross term vanishes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .circular import (
    LOG_TWO_PI,
    GeneralizedVonMises,
    bessel_ratio_over_x,
    gvm_log_normalizer,
    log_bessel_i0,
)
from .inference import bilinear_terms, harmonic_count, pool_harmonics
from .toral import ToralBasis, orthogonalize, random_basis

log = logging.getLogger(__name__)


def _as_columns(x):
    x = np.asarray(x, dtype=float)
    return (x[:, None], True) if x.ndim == 1 else (x, False)


def _gaussian_part(W, sigma, X, Y, U, V):
    """Gaussian prefactor including the out-of-span cross term, per column."""
    D = W.shape[0]
    span_dot = np.sum(U * V, axis=0)
    outside = np.sum(X * Y, axis=0) - span_dot
    quad = np.sum(X * X, axis=0) + np.sum(Y * Y, axis=0) - 2.0 * outside
    return -quad / (2 * sigma**2) - 0.5 * D * (LOG_TWO_PI + 2 * np.log(sigma))


def log_marginal_from_W(W, sigma, x, y, prior_eta=None):
    """Uncoupled log marginal likelihood for an arbitrary (not validated) ``W``."""
    W = np.asarray(W, dtype=float)
    X, single = _as_columns(x)
    Y, _ = _as_columns(y)
    if X.shape != Y.shape or X.shape[0] != W.shape[0]:
        raise ValueError(f"data shapes {X.shape}, {Y.shape} do not match D = {W.shape[0]}")
    J = W.shape[1] // 2
    U = W.T @ X
    V = W.T @ Y
    eta = bilinear_terms(U.reshape(J, 2, -1), V.reshape(J, 2, -1), sigma)
    prior_term = 0.0
    if prior_eta is not None:
        prior_eta = np.asarray(prior_eta, dtype=float)
        eta = eta + prior_eta[:, :, None]
        prior_term = np.sum(log_bessel_i0(np.linalg.norm(prior_eta, axis=1)))
    kappa_hat = np.linalg.norm(eta, axis=1)
    out = _gaussian_part(W, sigma, X, Y, U, V) + np.sum(log_bessel_i0(kappa_hat), axis=0) - prior_term
    return float(out[0]) if single else out


def log_marginal_uncoupled(basis, x, y, prior=None):
    """``log p(y | x)`` under the maximal-torus model.

    ``x``, ``y`` are vectors or D x N matrices (one value per column);
    ``prior`` is per-subspace von Mises natural parameters (J, 2) or None.
    """
    return log_marginal_from_W(basis.W, basis.sigma, x, y, prior)


def log_marginal_coupled(basis, x, y, prior=None):
    """``log p(y | x)`` under the one-parameter (coupled) model."""
    X, single = _as_columns(x)
    Y, _ = _as_columns(y)
    if X.shape != Y.shape or X.shape[0] != basis.D:
        raise ValueError(f"data shapes {X.shape}, {Y.shape} do not match D = {basis.D}")
    W, sigma, omega = basis.W, basis.sigma, basis.omega
    U, V = W.T @ X, W.T @ Y
    terms = bilinear_terms(U.reshape(basis.J, 2, -1), V.reshape(basis.J, 2, -1), sigma)
    K = harmonic_count(omega, prior)
    prior_eta = np.zeros((K, 2)) if prior is None else prior.extended(K).eta_plus
    pooled = pool_harmonics(terms, omega, K) + prior_eta[:, :, None]
    # zero-weight subspaces are not rotated: their bilinear term is a constant
    static = np.sum(terms[omega == 0, 0], axis=0)
    log_z_post = gvm_log_normalizer(np.moveaxis(pooled, 2, 0))
    log_z_prior = gvm_log_normalizer(prior_eta)
    out = _gaussian_part(W, sigma, X, Y, U, V) + static + log_z_post - log_z_prior
    return float(out[0]) if single else out


def log_marginal_and_grad(W, sigma, X, Y, prior_eta=None):
    """Per-column log marginals and the gradient of their sum w.r.t. ``W``.

    Differentiates ``log I0(|eta_hat_j|)`` through the posterior update
    (giving the ``I1/I0`` weights) and the out-of-span cross term.
    """
    W = np.asarray(W, dtype=float)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    J = W.shape[1] // 2
    U = W.T @ X
    V = W.T @ Y
    u = U.reshape(J, 2, -1)
    v = V.reshape(J, 2, -1)
    eta = bilinear_terms(u, v, sigma)
    prior_term = 0.0
    if prior_eta is not None:
        prior_eta = np.asarray(prior_eta, dtype=float)
        eta = eta + prior_eta[:, :, None]
        prior_term = np.sum(log_bessel_i0(np.linalg.norm(prior_eta, axis=1)))
    kappa_hat = np.linalg.norm(eta, axis=1)
    values = _gaussian_part(W, sigma, X, Y, U, V) + np.sum(log_bessel_i0(kappa_hat), axis=0) - prior_term

    g = bessel_ratio_over_x(kappa_hat)
    w1 = g * eta[:, 0] - 1.0  # the -1 comes from the cross term
    w2 = g * eta[:, 1]
    P = np.empty_like(u)
    P[:, 0] = w1 * v[:, 0] + w2 * v[:, 1]
    P[:, 1] = w1 * v[:, 1] - w2 * v[:, 0]
    Q = np.empty_like(u)
    Q[:, 0] = w1 * u[:, 0] - w2 * u[:, 1]
    Q[:, 1] = w1 * u[:, 1] + w2 * u[:, 0]
    grad = (X @ P.reshape(2 * J, -1).T + Y @ Q.reshape(2 * J, -1).T) / sigma**2
    return values, grad


def grad_log_marginal_W(basis, X, Y, prior=None):
    """Gradient of ``sum_n log p(y_n | x_n)`` with respect to ``W`` (D x 2J)."""
    W = basis.W if isinstance(basis, ToralBasis) else np.asarray(basis, dtype=float)
    sigma = basis.sigma if isinstance(basis, ToralBasis) else 1.0
    X, _ = _as_columns(X)
    Y, _ = _as_columns(Y)
    if X.shape != Y.shape or X.shape[0] != W.shape[0]:
        raise ValueError(f"data shapes {X.shape}, {Y.shape} do not match D = {W.shape[0]}")
    return log_marginal_and_grad(W, sigma, X, Y, prior)[1]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    """Non-finite gradient or likelihood; ``state`` holds the diagnostic dump."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass
class TrainConfig:
    J: int
    alpha0: float = 0.25
    minibatch: int = 100
    passes: int = 1
    sigma: float = 1.0
    seed: int = 0
    start_pass: int = 1
    eval_every: int = 50
    grad_check: bool = False

    def __post_init__(self):
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be nonnegative")
        if self.minibatch < 1:
            raise ValueError("minibatch must be at least 1")
        if self.J < 1:
            raise ValueError("J must be at least 1")
        if self.start_pass < 1:
            raise ValueError("start_pass counts from 1")


def learning_rate(alpha0, T):
    """Per-pass schedule ``alpha0 / sqrt(T)``."""
    return alpha0 / np.sqrt(T)


class LogRow(NamedTuple):
    step: int
    passes: int
    alpha: float
    mean_log_marginal: float


@dataclass
class TrainResult:
    basis: ToralBasis
    log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)  # (step, held-out mean log marginal)


def _finite_difference_check(W, sigma, X, Y, h=1e-5, tol=1e-5):
    _, grad = log_marginal_and_grad(W, sigma, X, Y)
    rng = np.random.default_rng(0)
    for _ in range(5):
        i, k = rng.integers(W.shape[0]), rng.integers(W.shape[1])
        Wp, Wm = W.copy(), W.copy()
        Wp[i, k] += h
        Wm[i, k] -= h
        fd = (np.sum(log_marginal_from_W(Wp, sigma, X, Y))
              - np.sum(log_marginal_from_W(Wm, sigma, X, Y))) / (2 * h)
        if abs(fd - grad[i, k]) > tol * max(1.0, abs(fd)):
            raise RuntimeError(f"gradient check failed at W[{i},{k}]: analytic {grad[i, k]}, fd {fd}")


def sgd_train(config, pairs, init=None, holdout=None):
    """Minibatch gradient ascent on the uncoupled log marginal likelihood.

    ``pairs`` is a ``PairBatch`` (X, Y as D x N).  Each pass visits the
    pairs in a permutation drawn from ``(seed, pass)``, so a run resumed
    from a saved model with ``start_pass`` set continues the same
    trajectory.  ``W`` is retracted onto orthonormal columns after every
    step.  ``holdout`` (a PairBatch) is scored every ``eval_every`` steps.
    """
    X, Y = np.asarray(pairs.X, float), np.asarray(pairs.Y, float)
    D, N = X.shape
    if Y.shape != X.shape:
        raise ValueError("X and Y must have the same shape")
    if init is None:
        basis = random_basis(D, config.J, rng=np.random.default_rng([config.seed]),
                             sigma=config.sigma)
    else:
        if init.D != D or init.J != config.J:
            raise ValueError(f"initial model is {init.D}x{2 * init.J}, data needs {D}x{2 * config.J}")
        basis = ToralBasis(init.W, init.omega, config.sigma)
    W = basis.W.copy()
    sigma = config.sigma
    result = TrainResult(basis)

    def checkpoint(step):
        if holdout is not None:
            val = float(np.mean(log_marginal_from_W(W, sigma, holdout.X, holdout.Y)))
            result.checkpoints.append((step, val))

    step = 0
    checkpoint(step)
    for T in range(config.start_pass, config.start_pass + config.passes):
        alpha = learning_rate(config.alpha0, T)
        order = np.random.default_rng([config.seed, T]).permutation(N)
        for start in range(0, N, config.minibatch):
            idx = order[start:start + config.minibatch]
            xb, yb = X[:, idx], Y[:, idx]
            if config.grad_check and step == 0:
                _finite_difference_check(W, sigma, xb[:, :3], yb[:, :3])
            values, grad = log_marginal_and_grad(W, sigma, xb, yb)
            if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(values))):
                state = {"step": step, "pass": T, "alpha": alpha, "W": W.copy(),
                         "batch_indices": idx.copy()}
                raise TrainingDiverged(f"non-finite gradient at step {step} (pass {T})", state)
            W = orthogonalize(W + alpha * grad / idx.size)
            step += 1
            result.log.append(LogRow(step, T, float(alpha), float(np.mean(values))))
            if step % config.eval_every == 0:
                checkpoint(step)
        log.debug("pass %d done, last minibatch mean log marginal %.4f", T, result.log[-1][3])
    result.basis = ToralBasis(W, basis.omega, sigma)
    return result


# ---------------------------------------------------------------------------
# Weight estimation
# ---------------------------------------------------------------------------


class WeightEstimate(NamedTuple):
    omega: np.ndarray  # rounded integer weights
    rates: np.ndarray  # raw angular velocity estimates theta_j / delta
    confident: np.ndarray  # False where the estimate cannot be trusted
    precision: np.ndarray  # pooled posterior precision per subspace


def estimate_weights(basis, rotate: Callable, delta=np.deg2rad(0.1), X=None,
                     n=1000, seed=0, min_precision=1e-6):
    """Estimate the integer weight of every subspace from slightly transformed data.

    ``rotate(X, delta)`` applies the true data-space transformation to the
    columns of ``X``.  The posterior natural parameters of all pairs
    ``(rotate(x, 0), rotate(x, delta))`` are summed per subspace (a precision-weighted
    circular mean), the resulting mean angle in ``(-pi, pi]`` is divided by
    ``delta`` and rounded.  Weights that come out as zero are flagged as
    unconfident, since they are indistinguishable from a failed estimate.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if X is None:
        X = np.random.default_rng(seed).standard_normal((basis.D, n))
    X = np.asarray(X, dtype=float)
    # rotate(X, 0) applies any masking the transformation itself performs
    X, Y = rotate(X, 0.0), rotate(X, delta)
    u = (basis.W.T @ X).reshape(basis.J, 2, -1)
    v = (basis.W.T @ Y).reshape(basis.J, 2, -1)
    eta = bilinear_terms(u, v, basis.sigma).sum(axis=2)
    precision = np.linalg.norm(eta, axis=1)
    theta = np.arctan2(eta[:, 1], eta[:, 0])
    rates = theta / delta
    strong = precision >= min_precision
    omega = np.where(strong, np.rint(rates), 0).astype(np.int64)
    confident = strong & (omega != 0)
    return WeightEstimate(omega, rates, confident, precision)


def sort_by_abs_weight(basis):
    """Reorder filter pairs by increasing ``|omega|`` (stable)."""
    order = np.argsort(np.abs(basis.omega), kind="stable")
    cols = np.ravel(np.column_stack([2 * order, 2 * order + 1]))
    return ToralBasis(basis.W[:, cols], basis.omega[order], basis.sigma), order
