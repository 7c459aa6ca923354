"""Maximum-likelihood estimation over the negative log-likelihood.

The objective evaluates ``-L`` and ``-dL/dtheta`` in one filtering pass with
either the UD engine or the differentiated conventional filter.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baseline import conv_loglik_and_gradient
from .errors import DomainError, FilterError
from .sensitivity import ModelDerivativesAtTheta, ud_loglik_and_gradient
from .udfilter import ModelAtTheta

ENGINES = ("ud", "conv")


@dataclass
class Objective:
    """Negative log-likelihood of a record under a parametric model.

    Parameters
    ----------
    model : ParametricModel
    measurements : ndarray, shape (N, m)
    engine : {"ud", "conv"}
    compiled : bool
        Use the compiled whole-record passes.
    """

    model: object
    measurements: np.ndarray
    engine: str = "ud"
    compiled: bool = True
    n_evals: int = field(default=0, init=False)

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        self.measurements = np.asarray(self.measurements, dtype=float)

    @classmethod
    def from_trajectory(cls, model, traj, engine="ud", **kw):
        return cls(model, traj.measurements, engine, **kw)

    def report(self, theta, record=False):
        ss, dss = self.model.at(theta)
        self.n_evals += 1
        if self.engine == "ud":
            mod = ModelAtTheta.from_state_space(ss)
            der = ModelDerivativesAtTheta.from_state_space(ss, dss, mod)
            return ud_loglik_and_gradient(mod, der, self.measurements, record=record,
                                          compiled=self.compiled)
        return conv_loglik_and_gradient(ss, dss, self.measurements, record=record,
                                        compiled=self.compiled)


def evaluate(obj, theta):
    """Return ``(-L, -grad L)`` at ``theta``.

    Raises
    ------
    FilterError
        When the filtering pass fails; carries the step index.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    rep = obj.report(theta)
    return -rep.loglik, -rep.gradient


@dataclass
class MinimizeOptions:
    gtol: float = 1e-8
    max_iter: int = 200
    c1: float = 1e-4
    max_halvings: int = 60
    max_step: float = 2.0
    xtol: float = 1e-12


@dataclass
class EstimationResult:
    """Outcome of :func:`minimize`.

    ``final_gradient_norm`` is in natural units; ``history`` holds ``-L`` at
    the start and after every accepted step. When the first evaluation
    fails, ``theta_hat`` is the start value and ``neg_loglik`` is NaN.
    """

    theta_hat: np.ndarray
    iterations: int
    converged: bool
    final_gradient_norm: float
    neg_loglik: float
    failure_reason: Optional[str] = None
    n_evals: int = 0
    history: list = field(default_factory=list)


def _to_natural(phi, positive):
    return np.where(positive, np.exp(phi), phi)


def _to_internal(theta, positive):
    if np.any(positive & (theta <= 0)):
        raise DomainError("initial value must be positive for positive parameters")
    return np.where(positive, np.log(np.where(positive, theta, 1.0)), theta)


def minimize(obj, theta0, opts=None):
    """Quasi-Newton descent on ``-L`` with backtracking Armijo line search.

    Positive parameters are optimized as ``log(theta)``; results are reported
    in natural units. Failed evaluations during the line search count as an
    infinite objective. Stops when the natural-unit gradient norm is at most
    ``gtol * (1 + |-L|)``, when the step collapses, or after ``max_iter``
    iterations.
    """
    opts = opts or MinimizeOptions()
    positive = np.asarray(obj.model.positive, dtype=bool)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    phi = _to_internal(theta0, positive)
    evals0 = obj.n_evals

    def fg(phi):
        theta = _to_natural(phi, positive)
        f, g = evaluate(obj, theta)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise FilterError(-1, FloatingPointError("non-finite objective"))
        return f, g, np.where(positive, g * theta, g)

    def result(converged, it, f, g, reason=None):
        return EstimationResult(_to_natural(phi, positive), it, converged,
                                float(np.linalg.norm(g)), float(f), reason,
                                obj.n_evals - evals0, history)

    history = []
    try:
        f, g_nat, g = fg(phi)
    except (FilterError, DomainError, np.linalg.LinAlgError, ValueError) as exc:
        return result(False, 0, np.nan, np.full(theta0.size, np.nan), f"initial evaluation failed: {exc}")
    history.append(float(f))

    hinv = np.eye(phi.size) / max(np.linalg.norm(g), 1.0)
    for it in range(1, opts.max_iter + 1):
        if np.linalg.norm(g_nat) <= opts.gtol * (1.0 + abs(f)):
            return result(True, it - 1, f, g_nat)
        d = -hinv @ g
        slope = g @ d
        if not slope < 0:
            hinv = np.eye(phi.size) / max(np.linalg.norm(g), 1.0)
            d = -hinv @ g
            slope = g @ d
        norm_d = np.linalg.norm(d)
        if norm_d > opts.max_step:
            d *= opts.max_step / norm_d
            slope = g @ d
        alpha = 1.0
        accepted = False
        for _ in range(opts.max_halvings):
            trial = phi + alpha * d
            try:
                f_new, g_nat_new, g_new = fg(trial)
                if f_new <= f + opts.c1 * alpha * slope:
                    accepted = True
                    break
            except (FilterError, DomainError, np.linalg.LinAlgError, ValueError):
                pass
            alpha *= 0.5
        if not accepted:
            return result(False, it, f, g_nat, "step collapse: line search found no decrease")
        s = trial - phi
        y = g_new - g
        phi, f, g, g_nat = trial, f_new, g_new, g_nat_new
        history.append(float(f))
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if it == 1:
                hinv = np.eye(phi.size) * (sy / (y @ y))
            rho = 1.0 / sy
            v = np.eye(phi.size) - rho * np.outer(s, y)
            hinv = v @ hinv @ v.T + rho * np.outer(s, s)
        if np.linalg.norm(s) <= opts.xtol * (1.0 + np.linalg.norm(phi)):
            converged = np.linalg.norm(g_nat) <= opts.gtol * (1.0 + abs(f))
            return result(converged, it, f, g_nat, None if converged else "step collapse: negligible step")
    converged = np.linalg.norm(g_nat) <= opts.gtol * (1.0 + abs(f))
    return result(converged, opts.max_iter, f, g_nat, None if converged else "iteration limit")


@dataclass
class ScanRow:
    theta: float
    neg_loglik: float
    neg_grad: float
    error: Optional[str] = None


@dataclass
class ScanResult:
    rows: list
    argmin: Optional[float]
    bracket: Optional[tuple]

    def thetas(self):
        return np.array([r.theta for r in self.rows])

    def values(self):
        return np.array([r.neg_loglik for r in self.rows])

    def gradients(self):
        return np.array([r.neg_grad for r in self.rows])


def gradient_bracket(thetas, grads):
    """First grid interval where ``-grad L`` changes sign from negative to positive."""
    for i in range(len(thetas) - 1):
        g0, g1 = grads[i], grads[i + 1]
        if np.isfinite(g0) and np.isfinite(g1) and g0 < 0.0 <= g1:
            return float(thetas[i]), float(thetas[i + 1])
    return None


def scan(obj, grid):
    """Evaluate ``(-L, -grad L)`` over a one-dimensional parameter grid.

    Per-point failures are recorded in their row and the scan continues.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("scan grid is empty")
    rows = []
    for t in grid:
        try:
            f, g = evaluate(obj, [t])
            rows.append(ScanRow(float(t), float(f), float(g[0])))
        except (FilterError, DomainError, np.linalg.LinAlgError, ValueError) as exc:
            rows.append(ScanRow(float(t), np.nan, np.nan, str(exc)))
    vals = np.array([r.neg_loglik for r in rows])
    argmin = float(grid[np.nanargmin(vals)]) if np.any(np.isfinite(vals)) else None
    bracket = gradient_bracket(grid, np.array([r.neg_grad for r in rows]))
    return ScanResult(rows, argmin, bracket)
