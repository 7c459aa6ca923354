"""UD-based array covariance filter.

One step maps the predicted state ``x_{k|k-1}`` and the UD factors of
``P_{k|k-1}`` to ``x_{k+1|k}`` and the factors of ``P_{k+1|k}`` through a
single MWGS orthogonalization of the pre-arrays::

    A^T = [[G U_Q, F U_P, 0  ],      D_w = diag(D_Q, D_P, D_R)
           [0,     H U_P, U_R]]

The post-array ``U`` has the block form ``[[U_P+, K_p U_Re], [0, U_Re]]``
and ``D_beta = diag(D_P+, D_Re)``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FilterError, InvalidInnovationCovarianceError, ShapeError
from .linalg import UDFactors, solve_unit_upper, ud_of_covariance
from .mwgs import PostArrayTriple, PreArrayPair, mwgs_orthogonalize

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ModelAtTheta:
    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    q_ud: UDFactors
    r_ud: UDFactors
    pi0_ud: UDFactors

    def __post_init__(self):
        n, m, q = self.f.shape[0], self.h.shape[0], self.g.shape[1]
        if (self.f.shape != (n, n) or self.g.shape != (n, q) or self.h.shape != (m, n)
                or self.q_ud.dim != q or self.r_ud.dim != m or self.pi0_ud.dim != n):
            raise ShapeError("model matrices have inconsistent dimensions")
        if np.any(self.q_ud.d < 0) or np.any(self.r_ud.d <= 0) or np.any(self.pi0_ud.d <= 0):
            raise ValueError("noise factors must satisfy D_Q >= 0, D_R > 0, D_Pi0 > 0")

    @classmethod
    def from_state_space(cls, ss):
        return cls(ss.f, ss.g, ss.h, ud_of_covariance(ss.q), ud_of_covariance(ss.r),
                   ud_of_covariance(ss.pi0))

    @property
    def n(self):
        return self.f.shape[0]

    @property
    def m(self):
        return self.h.shape[0]

    @property
    def q(self):
        return self.g.shape[1]


@dataclass(frozen=True)
class FilterState:
    k: int
    x_hat: np.ndarray
    p_ud: UDFactors

    @classmethod
    def initial(cls, model):
        return cls(0, np.zeros(model.n), model.pi0_ud)


@dataclass(frozen=True)
class PostBlocks:
    u_p_next: np.ndarray
    d_p_next: np.ndarray
    gain_block: np.ndarray
    u_re: np.ndarray
    d_re: np.ndarray


@dataclass(frozen=True)
class StepOutput:
    """Everything one filter step produces.

    ``gain_block`` is ``K_p U_Re``; ``pre`` and ``post`` are retained because
    the sensitivity recursion reuses the same orthogonalization.
    """

    u_p_next: np.ndarray
    d_p_next: np.ndarray
    gain_block: np.ndarray
    u_re: np.ndarray
    d_re: np.ndarray
    e: np.ndarray
    e_bar: np.ndarray
    pre: PreArrayPair
    post: PostArrayTriple

    @property
    def b(self):
        return self.post.b


@dataclass
class LikelihoodReport:
    """Log-likelihood of a measurement record and its gradient.

    The per-step arrays are filled only when a pass is asked to record them.
    """

    loglik: float
    gradient: np.ndarray
    terms: Optional[np.ndarray] = None
    x_pred: Optional[np.ndarray] = None
    x_pred_sens: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)


def assemble_pre_arrays(model, state):
    n, m, q = model.n, model.m, model.q
    u_p = state.p_ud.u
    if u_p.shape != (n, n) or state.x_hat.shape != (n,):
        raise ShapeError("filter state does not match the model dimension")
    a = np.zeros((q + n + m, n + m))
    a[:q, :n] = (model.g @ model.q_ud.u).T
    a[q:q + n, :n] = (model.f @ u_p).T
    a[q:q + n, n:] = (model.h @ u_p).T
    a[q + n:, n:] = model.r_ud.u.T
    d_w = np.concatenate((model.q_ud.d, state.p_ud.d, model.r_ud.d))
    return PreArrayPair(a, d_w)


def read_post_arrays(post, n, m):
    """Read ``U_P+, D_P+, K_p U_Re, U_Re, D_Re`` from the post-arrays by position."""
    if post.u.shape != (n + m, n + m) or post.d_beta.shape != (n + m,):
        raise ShapeError(f"post-arrays are not ({n + m}, {n + m})")
    u = post.u
    return PostBlocks(u[:n, :n], post.d_beta[:n], u[:n, n:], u[n:, n:], post.d_beta[n:])


def filter_step(model, state, z):
    """Advance the filter by one measurement.

    Returns
    -------
    (FilterState, StepOutput)
        The predicted state ``x_{k+1|k}`` with factors of ``P_{k+1|k}`` and
        the step's intermediate quantities.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.m:
        raise ShapeError(f"measurement has length {z.size}, expected {model.m}")
    pre = assemble_pre_arrays(model, state)
    post = mwgs_orthogonalize(pre)
    blocks = read_post_arrays(post, model.n, model.m)
    e = z - model.h @ state.x_hat
    e_bar = solve_unit_upper(blocks.u_re, e)
    x_next = model.f @ state.x_hat + blocks.gain_block @ e_bar
    out = StepOutput(blocks.u_p_next, blocks.d_p_next, blocks.gain_block, blocks.u_re,
                     blocks.d_re, e, e_bar, pre, post)
    next_state = FilterState(state.k + 1, x_next, UDFactors(blocks.u_p_next, blocks.d_p_next))
    return next_state, out


def loglik_term(out):
    """One step's contribution ``-(m/2) ln 2pi - (ln det D_Re + e_bar^T D_Re^{-1} e_bar) / 2``."""
    d = out.d_re
    if not np.all(d > 0.0):
        raise InvalidInnovationCovarianceError("D_Re has a non-positive entry")
    return -0.5 * (d.size * LOG_2PI + np.sum(np.log(d)) + np.sum(out.e_bar ** 2 / d))


def ud_loglik(model, measurements):
    """Log-likelihood of ``measurements`` (shape (N, m)) from a plain UD filter pass."""
    state = FilterState.initial(model)
    total = 0.0
    for k, z in enumerate(np.atleast_2d(measurements) if len(measurements) else []):
        try:
            state, out = filter_step(model, state, z)
            total += loglik_term(out)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise FilterError(k, exc) from exc
    return total
