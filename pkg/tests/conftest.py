import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("default")

FD_REL_STEP = 1e-6


def central_diff(fun, theta, rel_step=FD_REL_STEP):
    """Central difference of ``fun`` (scalar or array valued) at scalar ``theta``."""
    h = rel_step * max(1.0, abs(theta))
    return (np.asarray(fun(theta + h)) - np.asarray(fun(theta - h))) / (2.0 * h)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.geomspace(1.0, cond, n)) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def dense_loglik(ss, zs):
    """Joint Gaussian log-density of a whole record, built without any filter."""
    from scipy.stats import multivariate_normal

    zs = np.asarray(zs, dtype=float)
    n_steps, m = zs.shape
    n = ss.n
    gqg = ss.g @ ss.q @ ss.g.T
    sig = [ss.pi0]
    for _ in range(1, n_steps):
        sig.append(ss.f @ sig[-1] @ ss.f.T + gqg)
    cov = np.zeros((n_steps * m, n_steps * m))
    for k in range(n_steps):
        c = sig[k]
        for j in range(k, n_steps):
            blk = ss.h @ c @ ss.h.T
            # blk = Cov(z_j, z_k) for j >= k
            cov[j * m:(j + 1) * m, k * m:(k + 1) * m] = blk
            cov[k * m:(k + 1) * m, j * m:(j + 1) * m] = blk.T
            c = ss.f @ c
        cov[k * m:(k + 1) * m, k * m:(k + 1) * m] += ss.r
    return multivariate_normal(np.zeros(n_steps * m), cov).logpdf(zs.reshape(-1))


def riccati(ss, zs):
    """Predicted means and covariances of the textbook filter, by explicit inverse."""
    x, p = np.zeros(ss.n), ss.pi0.copy()
    xs, ps = [], []
    for z in zs:
        re = ss.r + ss.h @ p @ ss.h.T
        k = ss.f @ p @ ss.h.T @ np.linalg.inv(re)
        x = ss.f @ x + k @ (z - ss.h @ x)
        p = ss.f @ p @ ss.f.T + ss.g @ ss.q @ ss.g.T - k @ re @ k.T
        xs.append(x)
        ps.append(p)
    return np.array(xs), np.array(ps)


def make_random(seed, n=None, m=None, q=None, p=None, n_steps=None):
    """Random model, parameter point near 0, and a simulated record."""
    from udsens.models import random_model, simulate

    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 5))
    m = m or int(rng.integers(1, n + 1))
    q = q or int(rng.integers(1, n + 1))
    p = p or int(rng.integers(1, 4))
    n_steps = n_steps or int(rng.integers(5, 51))
    model = random_model(rng, n, m, q, p)
    theta = rng.uniform(-0.3, 0.3, p)
    traj = simulate(model, theta, n_steps, int(rng.integers(2**31)))
    return model, theta, traj


def richardson_diff(fun, theta, h):
    """Central difference with one Richardson step; truncation error O(h^4).

    Used where the parameter is small compared to a fixed step ``h``.
    """
    d1 = (np.asarray(fun(theta + h)) - np.asarray(fun(theta - h))) / (2.0 * h)
    d2 = (np.asarray(fun(theta + h / 2)) - np.asarray(fun(theta - h / 2))) / h
    return (4.0 * d2 - d1) / 3.0


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
