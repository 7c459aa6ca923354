"""Parametric example systems and a seeded trajectory simulator.

Catalog
-------
``example1_static``
    Static pre-array pair used to check the MWGS derivative rule.
``ins_model``
    One channel of an inertial navigation error model, parameter ``gamma1``.
``illcond_model``
    Ill-conditioned covariance test family with conditioning knob ``delta``,
    parameter ``theta``.
``random_model``
    Random smooth well-conditioned models for cross-checking the engines.

Gaussian draws come from :func:`numpy.random.default_rng` (PCG64 bit
generator, ziggurat normals), so trajectories are bit-reproducible for a
given seed.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DomainError, ShapeError
from .linalg import ud_of_covariance
from .mwgs import PreArrayPair
from .statespace import StateSpace

INS_DEFAULTS = {"tau": 0.1, "g": 9.81, "a": 6.378e6, "h1": 1.0}


@dataclass(frozen=True)
class ParametricModel:
    """A state-space model whose matrices depend on a parameter vector.

    ``matrices(theta)`` returns a :class:`StateSpace`; ``derivatives(theta)``
    returns one :class:`StateSpace` of matrix derivatives per parameter.
    ``positive`` flags parameters the estimator keeps strictly positive.
    """

    name: str
    param_names: tuple
    matrices: Callable
    derivatives: Callable
    positive: tuple
    constants: dict = field(default_factory=dict)

    @property
    def p(self):
        return len(self.param_names)

    def dims(self, theta):
        ss = self.matrices(np.asarray(theta, dtype=float))
        return ss.n, ss.m, ss.q_dim

    def at(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.size != self.p:
            raise ShapeError(f"{self.name} takes {self.p} parameter(s), got {theta.size}")
        return self.matrices(theta), self.derivatives(theta)

    def describe(self):
        return {"name": self.name, "constants": dict(self.constants)}


def example1_static():
    """Pre-arrays ``A(theta)``, ``D_w(theta)`` and their exact derivatives.

    Returns
    -------
    (pre, pre_prime)
        ``pre(theta)`` gives a :class:`PreArrayPair`; ``pre_prime(theta)``
        gives ``(A', D_w')``.
    """

    def _check(theta):
        theta = float(theta)
        if theta == 0.0:
            raise DomainError("degenerate weight: theta must be nonzero")
        return theta

    def pre(theta):
        t = _check(theta)
        a = np.array([[t**5 / 20, t**4 / 8], [t**4 / 8, t**3 / 3], [t**3 / 6, t**2 / 2]])
        return PreArrayPair(a, np.array([t, t**2, t**3]))

    def pre_prime(theta):
        t = _check(theta)
        a = np.array([[t**4 / 4, t**3 / 2], [t**3 / 2, t**2], [t**2 / 2, t]])
        return a, np.array([1.0, 2 * t, 3 * t**2])

    return pre, pre_prime


def ins_model(tau=INS_DEFAULTS["tau"], g=INS_DEFAULTS["g"], a=INS_DEFAULTS["a"],
              h1=INS_DEFAULTS["h1"]):
    """Inertial navigation error model for one channel, parameter ``gamma1 > 0``.

    States are velocity error, vertical angle error, accelerometer error and
    gyro drift. The accelerometer error is first-order Gauss-Markov with
    ``b1 = 1 - gamma1*tau`` and input gain ``a1 = h1*sqrt(2*gamma1*tau)``.
    """
    if min(tau, g, a, h1) <= 0:
        raise DomainError("INS constants must be positive")

    def _gamma(theta):
        gamma = float(np.atleast_1d(theta)[0])
        if not gamma > 0.0:
            raise DomainError(f"gamma1 must be positive, got {gamma}")
        return gamma

    def matrices(theta):
        gamma = _gamma(theta)
        f = np.array([[1.0, -tau * g, tau, 0.0],
                      [tau / a, 1.0, 0.0, tau],
                      [0.0, 0.0, 1.0 - gamma * tau, 0.0],
                      [0.0, 0.0, 0.0, 1.0]])
        gm = np.array([[0.0], [0.0], [h1 * np.sqrt(2.0 * gamma * tau)], [0.0]])
        h = np.array([[1.0, 0.0, 0.0, 0.0]])
        return StateSpace(f, gm, h, np.eye(1), np.array([[0.01]]), np.eye(4))

    def derivatives(theta):
        gamma = _gamma(theta)
        df = np.zeros((4, 4))
        df[2, 2] = -tau
        dg = np.zeros((4, 1))
        dg[2, 0] = h1 * tau / np.sqrt(2.0 * gamma * tau)
        return [StateSpace(df, dg, np.zeros((1, 4)), np.zeros((1, 1)), np.zeros((1, 1)),
                           np.zeros((4, 4)))]

    return ParametricModel("ins", ("gamma1",), matrices, derivatives, (True,),
                           {"tau": tau, "g": g, "a": a, "h1": h1})


def illcond_model(delta):
    """Ill-conditioned test family; ``R = delta^2 theta^2 I``, ``Pi0 = theta^2 I``.

    ``G`` is an explicit 3 x 1 zero column with ``Q = 1``, so the process
    noise is inert but the pre-array layout is unchanged.
    """
    delta = float(delta)
    if not delta > 0.0:
        raise DomainError("delta must be positive")
    h = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0 + delta]])

    def _theta(theta):
        t = float(np.atleast_1d(theta)[0])
        if t == 0.0:
            raise DomainError("theta must be nonzero")
        return t

    def matrices(theta):
        t = _theta(theta)
        return StateSpace(np.eye(3), np.zeros((3, 1)), h, np.eye(1),
                          (delta * t) ** 2 * np.eye(2), t**2 * np.eye(3))

    def derivatives(theta):
        t = _theta(theta)
        return [StateSpace(np.zeros((3, 3)), np.zeros((3, 1)), np.zeros((2, 3)),
                           np.zeros((1, 1)), 2.0 * delta**2 * t * np.eye(2), 2.0 * t * np.eye(3))]

    return ParametricModel("illcond", ("theta",), matrices, derivatives, (True,),
                           {"delta": delta})


def constant_model(ss):
    """Wrap fixed matrices as a one-parameter model that ignores its parameter."""
    def derivatives(theta):
        return [ss.zeros_like()]

    return ParametricModel("constant", ("unused",), lambda theta: ss, derivatives, (False,))


def _spd(base, parts, theta, jitter):
    """``L L^T + jitter I`` with ``L = base + sum_i theta_i parts[i]``, plus derivatives."""
    lmat = base + np.tensordot(theta, parts, axes=1)
    s = lmat @ lmat.T + jitter * np.eye(base.shape[0])
    ds = [p @ lmat.T + lmat @ p.T for p in parts]
    return s, ds


def random_model(rng, n, m, q, p, name="random"):
    """Random smooth, well-conditioned parametric model with full ``Q, R, Pi0``.

    Every matrix, including the noise covariances, depends affinely (or
    through ``L L^T``) on all ``p`` parameters; parameters near 0 are the
    intended operating region.
    """
    def rand(*shape, scale=1.0):
        return scale * rng.standard_normal(shape)

    f0 = rand(n, n)
    f0 *= 0.8 / max(np.max(np.abs(np.linalg.eigvals(f0))), 1e-12)
    fs = rand(p, n, n, scale=0.1)
    g0, gs = rand(n, q), rand(p, n, q, scale=0.2)
    h0, hs = rand(m, n), rand(p, m, n, scale=0.2)
    lq, lqs = rand(q, q, scale=0.5), rand(p, q, q, scale=0.1)
    lr, lrs = rand(m, m, scale=0.5), rand(p, m, m, scale=0.1)
    lp, lps = rand(n, n, scale=0.7), rand(p, n, n, scale=0.1)

    def matrices(theta):
        theta = np.asarray(theta, dtype=float)
        qm, _ = _spd(lq, lqs, theta, 0.2)
        rm, _ = _spd(lr, lrs, theta, 0.2)
        pm, _ = _spd(lp, lps, theta, 0.5)
        return StateSpace(f0 + np.tensordot(theta, fs, axes=1), g0 + np.tensordot(theta, gs, axes=1),
                          h0 + np.tensordot(theta, hs, axes=1), qm, rm, pm)

    def derivatives(theta):
        theta = np.asarray(theta, dtype=float)
        _, dq = _spd(lq, lqs, theta, 0.2)
        _, dr = _spd(lr, lrs, theta, 0.2)
        _, dp = _spd(lp, lps, theta, 0.5)
        return [StateSpace(fs[i], gs[i], hs[i], dq[i], dr[i], dp[i]) for i in range(p)]

    return ParametricModel(name, tuple(f"theta{i + 1}" for i in range(p)), matrices, derivatives,
                           (False,) * p, {"n": n, "m": m, "q": q})


def build_model(name, **constants):
    """Look up a catalog model by name."""
    if name == "ins":
        return ins_model(**{k: float(v) for k, v in constants.items() if k in INS_DEFAULTS})
    if name == "illcond":
        return illcond_model(constants["delta"])
    raise KeyError(f"unknown model {name!r}")


@dataclass(frozen=True)
class Trajectory:
    seed: int
    theta_true: np.ndarray
    states: np.ndarray
    measurements: np.ndarray
    model: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return self.measurements.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.seed == other.seed and self.model == other.model
                and np.array_equal(self.theta_true, other.theta_true)
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.measurements, other.measurements))

    __hash__ = None


def _noise_factor(cov):
    ud = ud_of_covariance(cov)
    return ud.u * np.sqrt(ud.d)[np.newaxis, :]


def simulate(model, theta, n_steps, seed):
    """Simulate ``x_k = F x_{k-1} + G w_k``, ``z_k = H x_k + v_k`` for k = 0..N-1.

    ``x_0 ~ N(0, Pi0)``. Draws are taken in a fixed order: ``x_0``, then all
    ``w_k`` (k = 1..N-1), then all ``v_k`` (k = 0..N-1).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    ss, _ = model.at(theta)
    n, m, q = ss.n, ss.m, ss.q_dim
    rng = np.random.default_rng(seed)
    x0 = _noise_factor(ss.pi0) @ rng.standard_normal(n)
    w = rng.standard_normal((max(n_steps - 1, 0), q)) @ _noise_factor(ss.q).T
    v = rng.standard_normal((n_steps, m)) @ _noise_factor(ss.r).T
    states = np.empty((n_steps, n))
    x = x0
    for k in range(n_steps):
        if k > 0:
            x = ss.f @ x + ss.g @ w[k - 1]
        states[k] = x
    z = states @ ss.h.T + v
    return Trajectory(int(seed), theta, states, z, model.describe())


def replication_seed(root_seed, index):
    """Independent 63-bit seed for replication ``index`` derived from ``root_seed``."""
    state = np.random.SeedSequence([int(root_seed), int(index)]).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def save_trajectory(traj, csv_path):
    """Write measurements as CSV (``k, z1..zm``) with a JSON sidecar next to it."""
    csv_path = Path(csv_path)
    m = traj.measurements.shape[1] if traj.measurements.ndim == 2 else 0
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + [f"z{i + 1}" for i in range(m)])
        for k, row in enumerate(traj.measurements):
            w.writerow([k] + [repr(float(v)) for v in row])
    meta = {"seed": traj.seed, "theta_true": [float(t) for t in traj.theta_true],
            "model": traj.model, "N": int(traj.n_steps), "m": int(m)}
    sidecar_path(csv_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def sidecar_path(csv_path):
    return Path(csv_path).with_suffix(".json")


def load_trajectory(csv_path):
    """Read a trajectory written by :func:`save_trajectory`; states are not stored.

    Raises
    ------
    ValueError
        Naming the offending row and column for malformed content.
    """
    csv_path = Path(csv_path)
    meta = json.loads(sidecar_path(csv_path).read_text())
    m = int(meta["m"])
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{csv_path}: empty file, expected a header row")
    header = rows[0]
    expected = ["k"] + [f"z{i + 1}" for i in range(m)]
    if header != expected:
        raise ValueError(f"{csv_path}: header {header} does not match {expected}")
    z = np.empty((len(rows) - 1, m))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != m + 1:
            raise ValueError(f"{csv_path}: row {r} has {len(row)} columns, expected {m + 1}")
        for c, text in enumerate(row[1:], start=2):
            try:
                z[r - 2, c - 2] = float(text)
            except ValueError:
                raise ValueError(f"{csv_path}: row {r}, column {c} ({header[c - 1]}): "
                                 f"cannot parse {text!r}") from None
            if not np.isfinite(z[r - 2, c - 2]):
                raise ValueError(f"{csv_path}: row {r}, column {c}: non-finite value")
    return Trajectory(int(meta["seed"]), np.asarray(meta["theta_true"], dtype=float),
                      np.empty((z.shape[0], 0)), z, meta["model"])
