import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from udsens.errors import DomainError
from udsens.models import (
    Trajectory,
    build_model,
    constant_model,
    example1_static,
    illcond_model,
    ins_model,
    load_trajectory,
    random_model,
    replication_seed,
    save_trajectory,
    sidecar_path,
    simulate,
)
from udsens.statespace import StateSpace
from udsens.udfilter import FilterState, ModelAtTheta, filter_step

from conftest import central_diff, richardson_diff

MATRICES = ("f", "g", "h", "q", "r", "pi0")


def test_static_example_at_two():
    pre, prime = example1_static()
    p = pre(2.0)
    np.testing.assert_allclose(p.a, [[8 / 5, 2], [2, 8 / 3], [4 / 3, 2]], rtol=1e-15)
    np.testing.assert_array_equal(p.d_w, [2, 4, 8])
    a_p, w_p = prime(2.0)
    np.testing.assert_array_equal(a_p, [[4, 4], [4, 4], [2, 2]])
    np.testing.assert_array_equal(w_p, [1, 4, 12])


def test_static_example_at_one():
    p = example1_static()[0](1.0)
    np.testing.assert_allclose(p.a, [[1 / 20, 1 / 8], [1 / 8, 1 / 3], [1 / 6, 1 / 2]], rtol=1e-15)
    np.testing.assert_array_equal(p.d_w, np.ones(3))


def test_static_example_degenerate():
    pre, prime = example1_static()
    with pytest.raises(DomainError):
        pre(0.0)
    with pytest.raises(DomainError):
        prime(0.0)


@given(st.floats(0.3, 3.0))
def test_static_example_derivatives(t):
    pre, prime = example1_static()
    a_p, w_p = prime(t)
    np.testing.assert_allclose(a_p, central_diff(lambda x: pre(x).a, t), rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(w_p, central_diff(lambda x: pre(x).d_w, t), rtol=1e-7, atol=1e-9)


def test_ins_structure():
    pm = ins_model(tau=0.1, g=9.81, a=6.378e6, h1=1.0)
    ss, dss = pm.at([3e-4])
    assert ss.f[0, 1] == -0.1 * 9.81
    assert ss.f[1, 0] == 0.1 / 6.378e6
    assert (ss.n, ss.m, ss.q_dim) == (4, 1, 1)
    df = dss[0].f
    assert np.count_nonzero(df) == 1 and df[2, 2] == -0.1


def test_ins_domain():
    pm = ins_model()
    for bad in (0.0, -1e-4):
        with pytest.raises(DomainError):
            pm.at([bad])
    with pytest.raises(DomainError):
        ins_model(tau=-1.0)


def test_illcond_reference_problem():
    ss = illcond_model(1e-3).at([1.0])[0]
    np.testing.assert_array_equal(ss.h, [[1, 1, 1], [1, 1, 1 + 1e-3]])
    np.testing.assert_allclose(ss.r, 1e-6 * np.eye(2), rtol=1e-15)
    np.testing.assert_array_equal(ss.pi0, np.eye(3))
    np.testing.assert_array_equal(ss.f, np.eye(3))
    np.testing.assert_array_equal(ss.g, np.zeros((3, 1)))


def test_illcond_innovation_conditioning_grows_like_inverse_square():
    # smallest eigenvalue of H H^T is about delta^2 / 3, largest about 6
    for delta in (1e-2, 1e-3, 1e-4):
        ss = illcond_model(delta).at([7.0])[0]
        re = ss.r + ss.h @ ss.pi0 @ ss.h.T
        assert np.linalg.cond(re) * delta**2 == pytest.approx(4.5, rel=0.02)


def test_illcond_r_derivative():
    dss = illcond_model(1e-2).at([7.0])[1]
    np.testing.assert_allclose(dss[0].r, 2 * 1e-4 * 7 * np.eye(2), rtol=1e-15)


@pytest.mark.parametrize("name, theta", [("ins", [2e-4]), ("illcond", [7.0]), ("random", None)])
def test_derivative_gate(name, theta):
    if name == "ins":
        pm = ins_model()
    elif name == "illcond":
        pm = illcond_model(1e-2)
    else:
        pm = random_model(np.random.default_rng(0), 3, 2, 2, 2)
        theta = [0.1, -0.2]
    theta = np.asarray(theta, dtype=float)
    dss = pm.at(theta)[1]
    for i in range(pm.p):
        for mat in MATRICES:
            def fun(t):
                th = theta.copy()
                th[i] = t
                return getattr(pm.at(th)[0], mat)
            h = 1e-6 * max(1.0, abs(theta[i]))
            fd = richardson_diff(fun, theta[i], h)
            got = getattr(dss[i], mat)
            scale = max(1.0, np.max(np.abs(fd)))
            tol = 1e-8 if name == "ins" else 1e-6
            assert np.max(np.abs(got - fd)) <= tol * scale, (name, mat)


def test_build_model():
    assert build_model("ins", tau=0.2).constants["tau"] == 0.2
    assert build_model("illcond", delta=1e-3).constants["delta"] == 1e-3
    with pytest.raises(KeyError):
        build_model("nope")


def test_simulate_zero_noise():
    z = np.zeros((2, 2))
    ss = StateSpace(np.eye(2), np.eye(2), np.eye(2), z, z, z)
    traj = simulate(constant_model(ss), [0.0], 15, seed=3)
    assert not np.any(traj.states) and not np.any(traj.measurements)


def test_simulate_deterministic():
    pm = ins_model()
    a = simulate(pm, [2e-4], 100, seed=42)
    b = simulate(pm, [2e-4], 100, seed=42)
    c = simulate(pm, [2e-4], 100, seed=43)
    assert a == b
    assert a != c
    assert a.measurements.shape == (100, 1) and a.states.shape == (100, 4)


def test_simulate_empty():
    traj = simulate(illcond_model(1e-2), [7.0], 0, seed=0)
    assert traj.measurements.shape == (0, 2)


def test_innovation_covariance_matches_theory():
    pm = illcond_model(0.1)
    n_steps = 3000
    traj = simulate(pm, [7.0], n_steps, seed=9)
    model = ModelAtTheta.from_state_space(pm.at([7.0])[0])
    state = FilterState.initial(model)
    ratios = []
    for z in traj.measurements:
        state, out = filter_step(model, state, z)
        ratios.append(out.e_bar**2 / out.d_re)
    ratios = np.array(ratios)
    # after the transient the innovations settle at their steady-state covariance
    for j in range(2):
        assert abs(ratios[:, j].mean() - 1.0) <= 3.0 * np.sqrt(2.0 / n_steps)


def test_replication_seeds():
    seeds = [replication_seed(0, r) for r in range(100)]
    assert len(set(seeds)) == 100
    assert seeds == [replication_seed(0, r) for r in range(100)]
    assert replication_seed(1, 0) != seeds[0]
    assert all(0 <= s < 2**63 for s in seeds)


def test_csv_round_trip(tmp_path):
    traj = simulate(illcond_model(1e-2), [7.0], 25, seed=5)
    path = tmp_path / "t.csv"
    save_trajectory(traj, path)
    meta = json.loads(sidecar_path(path).read_text())
    assert meta["seed"] == 5 and meta["N"] == 25 and meta["theta_true"] == [7.0]
    assert meta["model"] == {"name": "illcond", "constants": {"delta": 0.01}}
    back = load_trajectory(path)
    np.testing.assert_array_equal(back.measurements, traj.measurements)
    assert isinstance(back, Trajectory)


def test_csv_header_only(tmp_path):
    traj = simulate(ins_model(), [2e-4], 0, seed=1)
    path = tmp_path / "e.csv"
    save_trajectory(traj, path)
    assert path.read_text() == "k,z1\n"
    assert load_trajectory(path).measurements.shape == (0, 1)


@pytest.mark.parametrize("body, fragment", [
    ("k,z1,z2\n0,1.0,abc\n", "row 2, column 3"),
    ("k,z1,z2\n0,1.0,2.0\n1,1.0\n", "row 3"),
    ("k,z1\n0,1.0\n", "header"),
    ("k,z1,z2\n0,nan,2.0\n", "row 2, column 2"),
    ("", "empty"),
])
def test_csv_validation(tmp_path, body, fragment):
    traj = simulate(illcond_model(1e-2), [7.0], 1, seed=5)
    path = tmp_path / "bad.csv"
    save_trajectory(traj, path)
    path.write_text(body)
    with pytest.raises(ValueError, match=fragment):
        load_trajectory(path)
