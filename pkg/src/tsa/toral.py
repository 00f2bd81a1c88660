"""Toroidal subgroups of SO(D).

A group element acts on data as ``rho = W R W^T + (I - W W^T)``: the
columns of ``W`` come in consecutive pairs spanning the invariant
subspaces, ``R`` is block diagonal with 2x2 rotations, and anything outside
``span(W)`` passes through unchanged.

Data vectors may be given as a single vector of length D or as a D x N
matrix whose columns are separate data points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .circular import wrap_angle

ORTHONORMAL_TOL = 1e-10


class RankDeficientError(ValueError):
    """Raised when a filter matrix cannot be orthogonalized."""


def _check_dim(basis, x):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != basis.D:
        raise ValueError(f"data has dimension {x.shape[0]}, basis expects {basis.D}")
    return x


@dataclass(frozen=True)
class ToralBasis:
    """Orthonormal filters ``W`` (D x 2J), integer weights ``omega`` and noise level ``sigma``."""

    W: np.ndarray
    omega: np.ndarray = None
    sigma: float = 1.0

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim != 2 or W.shape[1] % 2 or W.shape[1] == 0:
            raise ValueError(f"W must be D x 2J with J >= 1, got shape {W.shape}")
        if W.shape[1] > W.shape[0]:
            raise ValueError(f"2J = {W.shape[1]} exceeds D = {W.shape[0]}")
        err = np.abs(W.T @ W - np.eye(W.shape[1])).max()
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"W is not orthonormal (max |W^T W - I| = {err:.3g})")
        J = W.shape[1] // 2
        if self.omega is None:
            omega = np.ones(J, dtype=np.int64)
        else:
            raw = np.asarray(self.omega)
            omega = raw.astype(np.int64)
            if raw.shape != (J,) or np.any(omega != raw):
                raise ValueError(f"omega must be {J} integers, got {raw!r}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        W.setflags(write=False)
        omega.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def D(self):
        return self.W.shape[0]

    @property
    def J(self):
        return self.W.shape[1] // 2

    def with_omega(self, omega):
        return ToralBasis(self.W, omega, self.sigma)

    def pair(self, j):
        """The D x 2 filter pair of subspace ``j`` (zero based)."""
        return self.W[:, 2 * j:2 * j + 2]


class SubspaceCoords(NamedTuple):
    u: np.ndarray  # (J, 2) or (J, 2, N)
    residual_energy: np.ndarray  # scalar or (N,)


def _rotation_blocks(angles):
    """Stack of 2x2 rotations with shape angles.shape + (2, 2)."""
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def block_rotation(phi):
    """Block-diagonal 2J x 2J matrix of rotations by the angles ``phi``."""
    phi = wrap_angle(np.atleast_1d(np.asarray(phi, dtype=float)))
    J = phi.shape[0]
    R = np.zeros((2 * J, 2 * J))
    blocks = _rotation_blocks(phi)
    for j in range(J):
        R[2 * j:2 * j + 2, 2 * j:2 * j + 2] = blocks[j]
    return R


def coupled_rotation(s, omega):
    """``R(s)`` with block ``j`` rotating by ``omega_j * s``.

    ``s`` is reduced mod 2*pi first, so ``R(s) == R(s + 2*pi)`` holds exactly
    for integer weights.
    """
    omega = np.asarray(omega, dtype=np.int64)
    return block_rotation(omega * float(wrap_angle(s)))


def generator_matrix(omega):
    """Lie algebra generator ``sum_j omega_j A_j`` of the coupled subgroup."""
    omega = np.atleast_1d(np.asarray(omega))
    J = omega.shape[0]
    A = np.zeros((2 * J, 2 * J))
    for j, w in enumerate(omega):
        A[2 * j, 2 * j + 1] = -w
        A[2 * j + 1, 2 * j] = w
    return A


def subspace_coords(basis, x):
    """Project onto the filter pairs: ``u_j = W_j^T x`` plus out-of-span energy."""
    x = _check_dim(basis, x)
    proj = basis.W.T @ x
    u = proj.reshape((basis.J, 2) + x.shape[1:])
    residual = np.sum(x * x, axis=0) - np.sum(proj * proj, axis=0)
    return SubspaceCoords(u, residual)


def _rotate_coords(u, angles):
    """Rotate each 2-vector ``u[j]`` by ``angles[j]`` (broadcast over columns)."""
    c = np.cos(angles)
    s = np.sin(angles)
    if u.ndim == 3:
        c, s = c[:, None], s[:, None]
    return np.stack([c * u[:, 0] - s * u[:, 1], s * u[:, 0] + c * u[:, 1]], axis=1)


def _apply(basis, angles, x):
    x = _check_dim(basis, x)
    proj = basis.W.T @ x
    u = proj.reshape((basis.J, 2) + x.shape[1:])
    rotated = _rotate_coords(u, angles).reshape(proj.shape)
    return x + basis.W @ (rotated - proj)


def apply_maximal(basis, phi, x):
    """Apply the maximal-torus element with angles ``phi`` (length J) to ``x``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] != basis.J:
        raise ValueError(f"expected {basis.J} angles, got {phi.shape[0]}")
    return _apply(basis, wrap_angle(phi), x)


def apply_coupled(basis, s, x):
    """Apply the one-parameter element ``s`` using the basis weights."""
    return _apply(basis, basis.omega * float(wrap_angle(s)), x)


def orthogonalize(W):
    """Closest matrix with orthonormal columns: ``U V^T`` from the thin SVD.

    The polar factor is unique for full column rank, so no sign convention
    on the singular vectors is needed.
    """
    W = np.asarray(W, dtype=float)
    U, S, Vt = np.linalg.svd(W, full_matrices=False)
    if S.size and S.min() <= 1e-12:
        raise RankDeficientError(
            f"W is rank deficient: smallest singular value {S.min():.3g} <= 1e-12"
        )
    return U @ Vt


def random_basis(D, J, rng=None, sigma=1.0):
    """Orthogonalized standard-normal initialization."""
    rng = np.random.default_rng(rng)
    W = orthogonalize(rng.standard_normal((D, 2 * J)))
    return ToralBasis(W, np.ones(J, dtype=np.int64), sigma)
