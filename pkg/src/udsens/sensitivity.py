"""Parameter sensitivities of the UD array filter and the log-likelihood gradient.

Each filter step runs one MWGS orthogonalization; every parameter then
reuses its ``B`` to propagate derivatives of the post-arrays, from which the
derivatives of ``U_P``, ``D_P``, ``K_p U_Re``, ``U_Re`` and ``D_Re`` are read
off by block position.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import FilterError, InvalidInnovationCovarianceError, RankDeficientError, ShapeError
from .linalg import solve_unit_upper, ud_of_covariance_derivative
from .mwgs import RANK_RTOL, REORTH_TOL, mwgs_derivative
from .udfilter import (
    FilterState,
    LikelihoodReport,
    ModelAtTheta,
    filter_step,
    loglik_term,
)


@dataclass(frozen=True)
class ParamDerivative:
    """Derivatives of the system matrices and noise factors for one parameter."""

    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    q_u: np.ndarray
    q_d: np.ndarray
    r_u: np.ndarray
    r_d: np.ndarray
    pi0_u: np.ndarray
    pi0_d: np.ndarray

    def is_zero(self):
        return not any(np.any(getattr(self, k)) for k in self.__dataclass_fields__)


@dataclass(frozen=True)
class ModelDerivativesAtTheta:
    params: tuple

    @property
    def p(self):
        return len(self.params)

    @classmethod
    def from_state_space(cls, ss, dss, model=None):
        """Build factor derivatives from matrix derivatives.

        Parameters
        ----------
        ss : StateSpace
            Model at the current parameter value.
        dss : sequence of StateSpace
            ``dss[i]`` holds the derivative of every matrix w.r.t. parameter i.
        model : ModelAtTheta, optional
            Factors of ``ss``; computed when omitted.
        """
        if model is None:
            model = ModelAtTheta.from_state_space(ss)
        out = []
        for d in dss:
            if d.f.shape != ss.f.shape or d.g.shape != ss.g.shape or d.h.shape != ss.h.shape:
                raise ShapeError("derivative matrices do not match the model")
            q_u, q_d = ud_of_covariance_derivative(ss.q, d.q, model.q_ud)
            r_u, r_d = ud_of_covariance_derivative(ss.r, d.r, model.r_ud)
            p_u, p_d = ud_of_covariance_derivative(ss.pi0, d.pi0, model.pi0_ud)
            out.append(ParamDerivative(d.f, d.g, d.h, q_u, q_d, r_u, r_d, p_u, p_d))
        return cls(tuple(out))


@dataclass(frozen=True)
class SensitivityState:
    """Per-parameter derivatives of ``x_{k|k-1}`` and of the factors of ``P_{k|k-1}``.

    Arrays are stacked along the first axis by parameter index.
    """

    x_prime: np.ndarray
    u_p_prime: np.ndarray
    d_p_prime: np.ndarray

    @classmethod
    def initial(cls, deriv, n):
        p = deriv.p
        u = np.zeros((p, n, n))
        d = np.zeros((p, n))
        for i, pd in enumerate(deriv.params):
            u[i] = pd.pi0_u
            d[i] = pd.pi0_d
        return cls(np.zeros((p, n)), u, d)


@dataclass(frozen=True)
class StepSensitivity:
    u_p_prime: np.ndarray
    d_p_prime: np.ndarray
    gain_block_prime: np.ndarray
    u_re_prime: np.ndarray
    d_re_prime: np.ndarray


def assemble_pre_array_derivatives(model, deriv, state, sens, i):
    """Derivatives ``(A', D_w')`` of the pre-arrays w.r.t. parameter ``i``."""
    pd = deriv.params[i]
    n, m, q = model.n, model.m, model.q
    u_p = state.p_ud.u
    u_p_prime = sens.u_p_prime[i]
    a = np.zeros((q + n + m, n + m))
    a[:q, :n] = (pd.g @ model.q_ud.u + model.g @ pd.q_u).T
    a[q:q + n, :n] = (pd.f @ u_p + model.f @ u_p_prime).T
    a[q:q + n, n:] = (pd.h @ u_p + model.h @ u_p_prime).T
    a[q + n:, n:] = pd.r_u.T
    d_w = np.concatenate((pd.q_d, sens.d_p_prime[i], pd.r_d))
    return a, d_w


def propagate_step_sensitivities(pre, pre_prime, post, n):
    """Block derivatives of the post-arrays for one parameter."""
    a_prime, d_w_prime = pre_prime
    der = mwgs_derivative(pre, a_prime, d_w_prime, post)
    up, dp = der.u_prime, der.d_beta_prime
    return StepSensitivity(up[:n, :n], dp[:n], up[:n, n:], up[n:, n:], dp[n:])


def innovation_sensitivity(out, u_re_prime, h, h_prime, x_hat, x_hat_prime):
    """Return ``(e', e_bar')`` with ``e_bar' = U_Re^{-1} (e' - U_Re' e_bar)``."""
    e_prime = -h_prime @ x_hat - h @ x_hat_prime
    e_bar_prime = solve_unit_upper(out.u_re, e_prime - u_re_prime @ out.e_bar)
    return e_prime, e_bar_prime


def state_sensitivity_update(f, f_prime, x_hat, x_hat_prime, out, gain_block_prime, e_bar_prime):
    """Derivative of ``x_{k+1|k} = F x + (K_p U_Re) e_bar``."""
    return (f_prime @ x_hat + f @ x_hat_prime + gain_block_prime @ out.e_bar
            + out.gain_block @ e_bar_prime)


def gradient_term(out, d_re_prime, e_bar_prime):
    """One step's contribution to the log-likelihood derivative for one parameter."""
    d = out.d_re
    if not np.all(d > 0.0):
        raise InvalidInnovationCovarianceError("D_Re has a non-positive entry")
    e_bar = out.e_bar
    return -0.5 * (np.sum(d_re_prime / d) + 2.0 * np.sum(e_bar_prime * e_bar / d)
                   - np.sum(e_bar ** 2 * d_re_prime / d ** 2))


def sensitivity_step(model, deriv, state, sens, z):
    """One step of the filter together with all parameter sensitivities.

    Returns
    -------
    next_state, next_sens, out, loglik_term, grad_terms, step_sens
        ``step_sens`` lists the :class:`StepSensitivity` of every parameter.
    """
    next_state, out = filter_step(model, state, z)
    n = model.n
    p = deriv.p
    x_prime = np.empty((p, n))
    u_prime = np.empty((p, n, n))
    d_prime = np.empty((p, n))
    grad = np.empty(p)
    step_sens = []
    for i, pd in enumerate(deriv.params):
        pre_prime = assemble_pre_array_derivatives(model, deriv, state, sens, i)
        blk = propagate_step_sensitivities(out.pre, pre_prime, out.post, n)
        _, e_bar_prime = innovation_sensitivity(out, blk.u_re_prime, model.h, pd.h,
                                                state.x_hat, sens.x_prime[i])
        x_prime[i] = state_sensitivity_update(model.f, pd.f, state.x_hat, sens.x_prime[i],
                                              out, blk.gain_block_prime, e_bar_prime)
        u_prime[i] = blk.u_p_prime
        d_prime[i] = blk.d_p_prime
        grad[i] = gradient_term(out, blk.d_re_prime, e_bar_prime)
        step_sens.append(blk)
    next_sens = SensitivityState(x_prime, u_prime, d_prime)
    return next_state, next_sens, out, loglik_term(out), grad, step_sens


def ud_loglik_and_gradient(model, deriv, measurements, record=False, compiled=True):
    """Log-likelihood and gradient of a measurement record via the UD filter.

    Parameters
    ----------
    model : ModelAtTheta
    deriv : ModelDerivativesAtTheta
    measurements : array_like, shape (N, m)
    record : bool
        Keep per-step log-likelihood terms, predicted states
        ``x_{k+1|k}`` and their sensitivities. The step-by-step path also
        stores ``P_{k+1|k}`` and its derivatives in ``extras``.
    compiled : bool
        Run the compiled whole-record kernel instead of the step functions.

    Raises
    ------
    FilterError
        Wrapping any numerical failure, with the step index.
    """
    zs = np.asarray(measurements, dtype=float).reshape(-1, model.m)
    if compiled:
        return _compiled_pass(model, deriv, zs, record)
    n_steps = zs.shape[0]
    state = FilterState.initial(model)
    sens = SensitivityState.initial(deriv, model.n)
    total = 0.0
    grad = np.zeros(deriv.p)
    if record:
        terms = np.empty(n_steps)
        xs = np.empty((n_steps, model.n))
        dxs = np.empty((n_steps, deriv.p, model.n))
        ps = np.empty((n_steps, model.n, model.n))
        dps = np.empty((n_steps, deriv.p, model.n, model.n))
    for k in range(n_steps):
        try:
            state, sens, _, term, g, _ = sensitivity_step(model, deriv, state, sens, zs[k])
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise FilterError(k, exc) from exc
        total += term
        grad += g
        if record:
            terms[k] = term
            xs[k] = state.x_hat
            dxs[k] = sens.x_prime
            ps[k] = state.p_ud.reconstruct()
            dps[k] = covariance_derivatives(state, sens)
    report = LikelihoodReport(float(total), grad)
    if record:
        report.terms, report.x_pred, report.x_pred_sens = terms, xs, dxs
        report.extras = {"p_pred": ps, "p_pred_sens": dps}
    return report


def covariance_derivatives(state, sens):
    """``P' = U' D U^T + U D' U^T + U D U'^T`` for every parameter."""
    u, d = state.p_ud.u, state.p_ud.d
    out = np.empty_like(sens.u_p_prime)
    for i in range(out.shape[0]):
        t = (sens.u_p_prime[i] * d) @ u.T
        out[i] = t + t.T + (u * sens.d_p_prime[i]) @ u.T
    return out


_STATUS_ERRORS = {
    _kernels.RANK_DEFICIENT: RankDeficientError("pivot below the rank floor"),
    _kernels.INVALID_RE: InvalidInnovationCovarianceError("D_Re has a non-positive entry"),
}


def _stack(arrays, shape):
    return np.array(arrays, dtype=float).reshape((len(arrays),) + shape)


def _compiled_pass(model, deriv, zs, record):
    n, m, q = model.n, model.m, model.q
    pars = deriv.params
    n_steps = zs.shape[0]
    terms = np.zeros(n_steps)
    xs = np.zeros((n_steps, n))
    dxs = np.zeros((n_steps, deriv.p, n))
    loglik, grad, status, step = _kernels.ud_pass(
        model.f, model.g, model.h, model.q_ud.u, model.q_ud.d, model.r_ud.u, model.r_ud.d,
        model.pi0_ud.u, model.pi0_ud.d,
        _stack([d.f for d in pars], (n, n)), _stack([d.g for d in pars], (n, q)),
        _stack([d.h for d in pars], (m, n)), _stack([d.q_u for d in pars], (q, q)),
        _stack([d.q_d for d in pars], (q,)), _stack([d.r_u for d in pars], (m, m)),
        _stack([d.r_d for d in pars], (m,)), _stack([d.pi0_u for d in pars], (n, n)),
        _stack([d.pi0_d for d in pars], (n,)),
        np.ascontiguousarray(zs), REORTH_TOL, RANK_RTOL ** 2, terms, xs, dxs)
    if status != _kernels.OK:
        raise FilterError(step, _STATUS_ERRORS[status])
    report = LikelihoodReport(float(loglik), grad)
    if record:
        report.terms, report.x_pred, report.x_pred_sens = terms, xs, dxs
    return report
