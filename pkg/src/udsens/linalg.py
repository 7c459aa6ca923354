"""Dense structured linear algebra for UD-factorized filters.

Diagonal matrices are stored as 1-D arrays of their diagonal. Unit upper
triangular factors are stored densely; :class:`UDFactors` enforces the exact
unit-diagonal / zero-lower pattern when it is constructed.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DegenerateFactorizationError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    ShapeError,
)

SYMMETRY_RTOL = 1e-10


def _as_square(m, name="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ShapeError(f"{name} must be a non-empty square matrix, got shape {m.shape}")
    return m


def unit_upper(m):
    """Return a copy of ``m`` with the lower part zeroed and the diagonal set to one."""
    u = np.triu(_as_square(m))
    np.fill_diagonal(u, 1.0)
    return u


def strict_upper(m):
    return np.triu(m, k=1)


def is_unit_upper(u):
    u = np.asarray(u)
    return (
        u.ndim == 2
        and u.shape[0] == u.shape[1]
        and np.all(np.diag(u) == 1.0)
        and not np.any(np.tril(u, k=-1))
    )


@dataclass(frozen=True)
class UDFactors:
    """Symmetric matrix represented as ``u @ diag(d) @ u.T``.

    Attributes
    ----------
    u : ndarray, shape (n, n)
        Unit upper triangular factor.
    d : ndarray, shape (n,)
        Diagonal of the diagonal factor.
    """

    u: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        d = np.array(self.d, dtype=float).reshape(-1)
        if u.ndim != 2 or u.shape != (d.size, d.size):
            raise ShapeError(f"u shape {u.shape} does not match d of length {d.size}")
        if not is_unit_upper(u):
            raise ValueError("u must be unit upper triangular")
        u.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "d", d)

    @property
    def dim(self):
        return self.d.size

    def reconstruct(self):
        return (self.u * self.d) @ self.u.T

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), np.ones(n))

    @classmethod
    def from_diagonal(cls, diag):
        diag = np.asarray(diag, dtype=float).reshape(-1)
        return cls(np.eye(diag.size), diag)


@dataclass(frozen=True)
class LduSplit:
    strictly_lower: np.ndarray
    diagonal: np.ndarray
    strictly_upper: np.ndarray


def symmetrize(s, rtol=SYMMETRY_RTOL):
    """Check ``s`` is symmetric to relative tolerance and return ``(s + s.T) / 2``."""
    s = _as_square(s)
    scale = np.max(np.abs(s))
    if np.max(np.abs(s - s.T)) > rtol * scale:
        raise NotSymmetricError("matrix is not symmetric within tolerance")
    return 0.5 * (s + s.T)


def mod_cholesky(s):
    """Modified Cholesky factorization ``s = U D U^T``.

    Parameters
    ----------
    s : array_like, shape (n, n)
        Symmetric positive definite matrix.

    Returns
    -------
    UDFactors
        ``U`` unit upper triangular, ``D`` positive diagonal.

    Raises
    ------
    NotSymmetricError
        If ``s`` is asymmetric beyond a relative tolerance of 1e-10.
    NotPositiveDefiniteError
        On a non-positive pivot.

    Notes
    -----
    Columns are eliminated from last to first, so a diagonal input yields
    ``U = I`` exactly.
    """
    s = symmetrize(s)
    n = s.shape[0]
    u = np.eye(n)
    d = np.zeros(n)
    # work on the upper triangle, eliminating trailing columns
    w = np.triu(s)
    for j in range(n - 1, -1, -1):
        dj = w[j, j]
        if not dj > 0.0:
            raise NotPositiveDefiniteError(f"non-positive pivot {dj!r} at index {j}")
        d[j] = dj
        col = w[:j, j] / dj
        u[:j, j] = col
        # Schur complement update of the leading block
        w[:j, :j] -= np.triu(np.outer(col, w[:j, j]))
    return UDFactors(u, d)


def ud_of_covariance(s):
    """UD factors of a covariance, read directly when ``s`` is exactly diagonal.

    The diagonal path accepts zero entries, which permits positive
    semidefinite process noise covariances.
    """
    s = _as_square(s)
    if not np.any(s - np.diag(np.diag(s))):
        diag = np.diag(s).copy()
        if np.any(diag < 0.0):
            raise NotPositiveDefiniteError("negative diagonal covariance entry")
        return UDFactors.from_diagonal(diag)
    return mod_cholesky(s)


def mod_cholesky_derivative(s, s_prime, f):
    """Derivatives of the modified Cholesky factors along a matrix path.

    Given ``s = U D U^T`` and the derivative ``s_prime`` of ``s``, returns
    ``(U', D')`` with ``U'`` strictly upper triangular such that
    ``U' D U^T + U D' U^T + U D U'^T = s_prime``.

    With ``Phi = U^{-1} s_prime U^{-T}``, ``D' = diag(Phi)`` and
    ``U' = U strict_upper(Phi) D^{-1}``.
    """
    s = _as_square(s, "s")
    s_prime = _as_square(s_prime, "s_prime")
    if s.shape != s_prime.shape or s.shape[0] != f.dim:
        raise ShapeError("s, s_prime and factors must share dimensions")
    s_prime = 0.5 * (s_prime + s_prime.T)
    if np.any(f.d == 0.0):
        raise DegenerateFactorizationError("diagonal factor has a zero entry")
    if not np.any(s_prime):
        return np.zeros_like(s_prime), np.zeros(f.dim)
    left = solve_triangular(f.u, s_prime, lower=False, unit_diagonal=True)
    phi = solve_unit_upper_right(left, f.u)
    d_prime = np.diag(phi).copy()
    u_prime = f.u @ (strict_upper(phi) / f.d[np.newaxis, :])
    return strict_upper(u_prime), d_prime


def ud_of_covariance_derivative(s, s_prime, f):
    """Factor derivatives matching :func:`ud_of_covariance`.

    For exactly diagonal ``s`` and ``s_prime`` the derivatives are read off
    directly, so zero entries in ``f.d`` are allowed there.
    """
    s = _as_square(s, "s")
    s_prime = _as_square(s_prime, "s_prime")
    if not np.any(s - np.diag(np.diag(s))) and not np.any(s_prime - np.diag(np.diag(s_prime))):
        return np.zeros_like(s_prime), np.diag(s_prime).copy()
    return mod_cholesky_derivative(s, s_prime, f)


def split_ldu(m):
    """Split a square matrix into strictly lower, diagonal and strictly upper parts."""
    m = _as_square(m)
    return LduSplit(np.tril(m, k=-1), np.diag(m).copy(), np.triu(m, k=1))


def solve_unit_upper_right(m, u):
    """Return ``X`` with ``X @ u.T = m`` for unit upper triangular ``u``.

    Computes ``m @ u^{-T}`` by a triangular solve rather than an inverse.
    """
    m = np.asarray(m, dtype=float)
    u = np.asarray(u, dtype=float)
    vector = m.ndim == 1
    m2 = np.atleast_2d(m)
    if u.ndim != 2 or u.shape[0] != u.shape[1] or m2.shape[1] != u.shape[0]:
        raise ShapeError(f"cannot right-solve shape {m.shape} against {u.shape}")
    x = solve_triangular(u, m2.T, lower=False, unit_diagonal=True).T
    return x[0] if vector else x


def solve_unit_upper(u, b):
    """Return ``u^{-1} b`` by back substitution."""
    return solve_triangular(u, b, lower=False, unit_diagonal=True)
