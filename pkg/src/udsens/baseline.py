"""Conventional Kalman filter and its direct differentiation.

This is the reference the UD pipeline is compared against. ``R_e`` is
inverted through an unregularized Cholesky factorization, so the filter
fails (or silently loses accuracy) when ``R_e`` is ill-conditioned in
working precision. ``P`` is symmetrized after every update.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _kernels
from .errors import FilterError, IllConditionedError
from .udfilter import LOG_2PI, LikelihoodReport


@dataclass(frozen=True)
class ConvFilterState:
    x_hat: np.ndarray
    p: np.ndarray
    x_prime: np.ndarray
    p_prime: np.ndarray

    @classmethod
    def initial(cls, ss, dss=()):
        n = ss.n
        p_prime = np.array([d.pi0 for d in dss]).reshape(len(dss), n, n)
        return cls(np.zeros(n), ss.pi0.copy(), np.zeros((len(dss), n)), p_prime)


@dataclass(frozen=True)
class ConvStepOutput:
    e: np.ndarray
    r_e: np.ndarray
    loglik: float
    gradient: np.ndarray


def _factor_re(r_e):
    try:
        c = cho_factor(r_e, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise IllConditionedError(f"innovation covariance is not positive definite: {exc}") from exc
    if not np.all(np.diag(c[0]) > 0.0):
        raise IllConditionedError("innovation covariance is singular")
    return c


def conv_kf_step(ss, state, z):
    """One step of the conventional filter; returns ``(state+, e, R_e)``."""
    z = np.asarray(z, dtype=float).reshape(-1)
    f, g, h = ss.f, ss.g, ss.h
    p = state.p
    ph = p @ h.T
    r_e = ss.r + h @ ph
    cf = _factor_re(r_e)
    e = z - h @ state.x_hat
    kp = cho_solve(cf, (f @ ph).T).T
    x_next = f @ state.x_hat + kp @ e
    p_next = f @ p @ f.T + g @ ss.q @ g.T - kp @ r_e @ kp.T
    p_next = 0.5 * (p_next + p_next.T)
    new = ConvFilterState(x_next, p_next, state.x_prime, state.p_prime)
    return new, e, r_e


def diff_kf_step(ss, dss, state, z):
    """One step of the differentiated filter.

    Every formula of :func:`conv_kf_step` is differentiated by the product
    rule, with ``(R_e^{-1})' = -R_e^{-1} R_e' R_e^{-1}``.

    Returns
    -------
    (ConvFilterState, ConvStepOutput)
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    f, g, h, q = ss.f, ss.g, ss.h, ss.q
    x, p = state.x_hat, state.p
    m = h.shape[0]
    ph = p @ h.T
    r_e = ss.r + h @ ph
    cf = _factor_re(r_e)
    e = z - h @ x
    k = f @ ph
    kp = cho_solve(cf, k.T).T
    x_next = f @ x + kp @ e
    gqg = g @ q @ g.T
    p_next = f @ p @ f.T + gqg - kp @ r_e @ kp.T
    p_next = 0.5 * (p_next + p_next.T)

    re_inv_e = cho_solve(cf, e)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    loglik = -0.5 * (m * LOG_2PI + logdet + e @ re_inv_e)

    n_par = len(dss)
    x_prime = np.empty_like(state.x_prime)
    p_prime = np.empty_like(state.p_prime)
    grad = np.empty(n_par)
    for i, d in enumerate(dss):
        xp, pp = state.x_prime[i], state.p_prime[i]
        re_p = d.r + d.h @ ph + h @ pp @ h.T + h @ p @ d.h.T
        k_p = d.f @ ph + f @ pp @ h.T + f @ p @ d.h.T
        kp_p = cho_solve(cf, k_p.T).T - kp @ cho_solve(cf, re_p.T).T
        e_p = -d.h @ x - h @ xp
        x_prime[i] = d.f @ x + f @ xp + kp_p @ e + kp @ e_p
        fpf_p = d.f @ p @ f.T
        gqg_p = d.g @ q @ g.T
        kre_p = kp_p @ r_e @ kp.T
        pn = (fpf_p + fpf_p.T + f @ pp @ f.T + gqg_p + gqg_p.T + g @ d.q @ g.T
              - kre_p - kre_p.T - kp @ re_p @ kp.T)
        p_prime[i] = 0.5 * (pn + pn.T)
        grad[i] = -0.5 * (np.trace(cho_solve(cf, re_p)) + 2.0 * e_p @ re_inv_e
                          - re_inv_e @ re_p @ re_inv_e)
    new = ConvFilterState(x_next, p_next, x_prime, p_prime)
    return new, ConvStepOutput(e, r_e, loglik, grad)


def conv_loglik_and_gradient(ss, dss, measurements, record=False, compiled=True):
    """Log-likelihood and gradient of a record by the differentiated filter.

    Parameters
    ----------
    ss : StateSpace
    dss : sequence of StateSpace
        Matrix derivatives, one per parameter.
    measurements : array_like, shape (N, m)
    record : bool
        Keep per-step terms, predicted states and their sensitivities. The
        step-by-step path also stores ``P`` and ``P'`` in ``extras``.
    compiled : bool
        Run the compiled whole-record kernel instead of :func:`diff_kf_step`.
    """
    zs = np.asarray(measurements, dtype=float).reshape(-1, ss.m)
    if compiled:
        return _compiled_pass(ss, dss, zs, record)
    state = ConvFilterState.initial(ss, dss)
    total = 0.0
    grad = np.zeros(len(dss))
    n_steps = zs.shape[0]
    if record:
        terms = np.empty(n_steps)
        xs = np.empty((n_steps, ss.n))
        dxs = np.empty((n_steps, len(dss), ss.n))
        ps = np.empty((n_steps, ss.n, ss.n))
        dps = np.empty((n_steps, len(dss), ss.n, ss.n))
    for k in range(n_steps):
        try:
            state, out = diff_kf_step(ss, dss, state, zs[k])
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise FilterError(k, exc) from exc
        if not (np.isfinite(out.loglik) and np.all(np.isfinite(out.gradient))):
            raise FilterError(k, IllConditionedError("non-finite likelihood term"))
        total += out.loglik
        grad += out.gradient
        if record:
            terms[k] = out.loglik
            xs[k], dxs[k] = state.x_hat, state.x_prime
            ps[k], dps[k] = state.p, state.p_prime
    report = LikelihoodReport(float(total), grad)
    if record:
        report.terms, report.x_pred, report.x_pred_sens = terms, xs, dxs
        report.extras = {"p_pred": ps, "p_pred_sens": dps}
    return report


def _compiled_pass(ss, dss, zs, record):
    n, m, q = ss.n, ss.m, ss.q_dim
    p = len(dss)

    def stack(name, shape):
        return np.array([getattr(d, name) for d in dss], dtype=float).reshape((p,) + shape)

    n_steps = zs.shape[0]
    terms = np.zeros(n_steps)
    xs = np.zeros((n_steps, n))
    dxs = np.zeros((n_steps, p, n))
    loglik, grad, status, step = _kernels.conv_pass(
        ss.f, ss.g, ss.h, ss.q, ss.r, ss.pi0,
        stack("f", (n, n)), stack("g", (n, q)), stack("h", (m, n)), stack("q", (q, q)),
        stack("r", (m, m)), stack("pi0", (n, n)),
        np.ascontiguousarray(zs), terms, xs, dxs)
    if status == _kernels.NOT_PD:
        raise FilterError(step, IllConditionedError("innovation covariance is not positive definite"))
    if status != _kernels.OK:
        raise FilterError(step, IllConditionedError("non-finite likelihood term"))
    report = LikelihoodReport(float(loglik), grad)
    if record:
        report.terms, report.x_pred, report.x_pred_sens = terms, xs, dxs
    return report
