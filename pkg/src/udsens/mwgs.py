"""Modified weighted Gram-Schmidt (MWGS) orthogonalization and its derivative.

Given pre-arrays ``(A, D_w)`` with ``A`` of shape (r, s), r > s, and ``D_w``
a nonnegative diagonal weight, the kernel returns post-arrays ``(U, D_beta, B)``
with::

    A^T = U B^T,   A^T D_w A = U D_beta U^T,   B^T D_w B = D_beta

where ``U`` is unit upper triangular. :func:`mwgs_derivative` maps the
derivatives of the pre-arrays with respect to a scalar parameter to the
derivatives of ``U`` and ``D_beta`` using only the pre-arrays, ``U``,
``D_beta`` and ``B``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficientError, ShapeError
from .linalg import solve_unit_upper_right

REORTH_TOL = 1e-8
RANK_RTOL = 1e-14


@dataclass(frozen=True)
class PreArrayPair:
    a: np.ndarray
    d_w: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        d_w = np.asarray(self.d_w, dtype=float).reshape(-1)
        if a.ndim != 2 or a.shape[0] <= a.shape[1]:
            raise ShapeError(f"pre-array must be r x s with r > s, got {a.shape}")
        if d_w.size != a.shape[0]:
            raise ShapeError(f"weight length {d_w.size} does not match {a.shape[0]} rows")
        if np.any(d_w < 0.0) or not np.all(np.isfinite(d_w)):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "d_w", d_w)

    def gram(self):
        return (self.a.T * self.d_w) @ self.a


@dataclass(frozen=True)
class PostArrayTriple:
    u: np.ndarray
    d_beta: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class PostArrayDerivative:
    u_prime: np.ndarray
    d_beta_prime: np.ndarray


def mwgs_orthogonalize(pre, reorth_tol=REORTH_TOL, rank_rtol=RANK_RTOL):
    """Orthogonalize the columns of ``pre.a`` in the ``D_w`` inner product.

    Columns are processed from last to first so that ``A = B U^T`` with
    ``U`` unit upper triangular. Each new direction is checked against the
    ones already produced and re-orthogonalized once when a weighted cosine
    exceeds ``reorth_tol``.

    Parameters
    ----------
    pre : PreArrayPair
    reorth_tol : float
        Weighted cosine above which a column is projected a second time.
    rank_rtol : float
        A column is declared dependent when its orthogonalized weighted norm
        falls below ``rank_rtol`` times its original weighted norm.

    Returns
    -------
    PostArrayTriple

    Raises
    ------
    RankDeficientError
        If a pivot is non-positive, non-finite, or below the rank floor.
    """
    a, w = pre.a, pre.d_w
    s = a.shape[1]
    v = a.copy()
    u = np.eye(s)
    d = np.empty(s)
    norms = np.einsum("ij,i,ij->j", a, w, a)
    floor2 = rank_rtol * rank_rtol
    for j in range(s - 1, -1, -1):
        bj = v[:, j]
        wb = w * bj
        dj = bj @ wb
        if j < s - 1 and dj > 0.0:
            done = v[:, j + 1:]
            c = done.T @ wb
            if np.max(np.abs(c) / np.sqrt(d[j + 1:] * dj)) > reorth_tol:
                coef = c / d[j + 1:]
                bj -= done @ coef
                u[j, j + 1:] += coef
                wb = w * bj
                dj = bj @ wb
        if not (np.isfinite(dj) and dj > 0.0 and dj >= floor2 * norms[j]):
            raise RankDeficientError(f"pivot {dj!r} for column {j} is below the rank floor")
        d[j] = dj
        if j > 0:
            coef = (v[:, :j].T @ wb) / dj
            u[:j, j] = coef
            v[:, :j] -= np.outer(bj, coef)
    return PostArrayTriple(u, d, v)


def mwgs_derivative(pre, a_prime, d_w_prime, post):
    """Derivatives of the MWGS post-arrays with respect to a scalar parameter.

    Parameters
    ----------
    pre : PreArrayPair
        Pre-arrays ``(A, D_w)`` at the current parameter value.
    a_prime : ndarray, shape (r, s)
        Derivative of ``A``.
    d_w_prime : ndarray, shape (r,)
        Derivative of the weight diagonal.
    post : PostArrayTriple
        Output of :func:`mwgs_orthogonalize` for ``pre``.

    Returns
    -------
    PostArrayDerivative
        ``u_prime`` is strictly upper triangular; ``d_beta_prime`` is a 1-D
        array.

    Notes
    -----
    Let ``M0 = B^T D_w A' U^{-T}`` be split into strictly lower, diagonal and
    strictly upper parts ``(L0, D0, U0)`` and let ``D2, U2`` be the diagonal
    and strictly upper parts of the symmetric ``B^T D_w' B``. Then::

        U' = U (L0^T + U0 + U2) D_beta^{-1},   D_beta' = 2 D0 + D2
    """
    a_prime = np.asarray(a_prime, dtype=float)
    d_w_prime = np.asarray(d_w_prime, dtype=float).reshape(-1)
    if a_prime.shape != pre.a.shape or d_w_prime.size != pre.d_w.size:
        raise ShapeError("pre-array derivative shapes do not match the pre-arrays")
    d_beta = post.d_beta
    if not np.all(d_beta > 0.0):
        raise RankDeficientError("derivative undefined: D_beta has a non-positive entry")
    s = d_beta.size
    if not (np.any(a_prime) or np.any(d_w_prime)):
        return PostArrayDerivative(np.zeros((s, s)), np.zeros(s))
    bt = post.b.T
    m0 = solve_unit_upper_right((bt * pre.d_w) @ a_prime, post.u)
    m2 = (bt * d_w_prime) @ post.b
    # L0^T + U0 + U2 gathered directly into the strictly upper triangle
    upper = np.triu(m0.T + m0 + m2, k=1)
    u_prime = np.triu(post.u @ (upper / d_beta[np.newaxis, :]), k=1)
    d_beta_prime = 2.0 * np.diag(m0) + np.diag(m2)
    return PostArrayDerivative(u_prime, d_beta_prime)
