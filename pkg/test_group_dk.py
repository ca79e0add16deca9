import numpy as np
import pytest

from conftest import random_feature, rotate
from ggmotion import autodiff as ad
from ggmotion import geom, group_dk
from ggmotion.autodiff import ParamStore, Scope, Tape
from ggmotion.eqmlp import EqMlpParams, eqmlp_apply
from ggmotion.errors import DomainError
from ggmotion.group_dk import (
    BlockState,
    GroupInteractionParams,
    centroid_update,
    inter_group,
    intra_group,
    iterative_dk,
    iterative_dk_oracle,
    kinematics_update,
    parallel_dk,
    project_centroid_columns,
)
from ggmotion.topology import build_topology, chain

C = 3


def _setup(topo, seed=0, **flags):
    p = GroupInteractionParams.for_topology(topo, C, 4, **flags)
    store = ParamStore()
    p.init(store, "block.0", geom.Rng(seed))
    return p, store


def _run(fn, store, *arrays):
    tape = Tape()
    scope = Scope(tape, store, "block.0")
    return fn(scope, *[tape.constant(a) for a in arrays]).value


def _state_run(fn, store, topo, p, f, X, V):
    tape = Tape()
    scope = Scope(tape, store, "block.0")
    state = BlockState(tape.constant(X), tape.constant(V))
    return fn(scope, tape.constant(f), state, topo, p).value


def _check_equivariant(rng, compute, *arrays):
    base = compute(*arrays)
    for k in range(20):
        r = geom.sample_orthogonal(rng.split(f"r{k}"), reflect=bool(k % 2))
        np.testing.assert_allclose(compute(*[rotate(r, a) for a in arrays]), rotate(r, base), atol=1e-10)


def test_inter_group_zero_force_is_unchanged(fork):
    p, store = _setup(fork)
    f = np.zeros((1, 5, 3, C))
    assert np.array_equal(_run(lambda s, x: inter_group(s, x, fork, p), store, f), f)


def test_inter_group_equivariance(rng, fork):
    for slice_reading in (False, True):
        p, store = _setup(fork, inter_slice=slice_reading)
        _check_equivariant(rng, lambda f: _run(lambda s, x: inter_group(s, x, fork, p), store, f),
                           random_feature(rng, 2, 5, 3, C))


def test_inter_group_with_first_input_passthrough(monkeypatch, rng, fork):
    p, store = _setup(fork)

    def first_input(scope, params, variables):
        first = ad.take(variables, [0], axis=-3)
        return ad.reshape(first, variables.shape[:-3] + variables.shape[-2:])

    monkeypatch.setattr(group_dk, "eqmlp_forward", first_input)
    f = random_feature(rng, 1, 5, 3, C)
    out = _run(lambda s, x: inter_group(s, x, fork, p), store, f)
    g1 = f[0, [0, 1, 2]].sum(axis=0)
    np.testing.assert_allclose(out[0], f[0] + g1, atol=1e-14)


def test_intra_group_zero_and_equivariance(rng, fork):
    p, store = _setup(fork, seed=2)
    zero = np.zeros((1, 5, 3, C))
    assert np.array_equal(_run(lambda s, x: intra_group(s, x, fork, p), store, zero), zero)
    _check_equivariant(rng, lambda f: _run(lambda s, x: intra_group(s, x, fork, p), store, f),
                       random_feature(rng, 2, 5, 3, C))


def test_intra_group_singleton_is_single_variable_residual(rng):
    topo = build_topology([None, 0, 1], [[0, 1], [2]])
    p, store = _setup(topo, seed=5)
    f = random_feature(rng, 1, 3, 3, C)
    out = _run(lambda s, x: intra_group(s, x, topo, p), store, f)
    single = EqMlpParams(1, C, 4, pooled=False)
    expected = f[:, 2] + eqmlp_apply(store, "block.0.intra.1", single, f[:, 2:3])[:, 0]
    np.testing.assert_allclose(out[:, 2], expected, atol=1e-14)


def test_parallel_dk_zero_and_equivariance(rng, fork):
    p, store = _setup(fork, seed=4)
    X = np.broadcast_to(np.array([0.3, 0.1, -0.2])[:, None], (1, 5, 3, C)).copy()
    zero = np.zeros((1, 5, 3, C))
    assert np.array_equal(_state_run(parallel_dk, store, fork, p, zero, X, zero), zero)

    def compute(f, X, V):
        return _state_run(parallel_dk, store, fork, p, f, X, V)

    _check_equivariant(rng, compute, *(random_feature(rng, 2, 5, 3, C) for _ in range(3)))


def test_parallel_dk_does_not_depend_on_joint_order(rng, fork):
    p, store = _setup(fork, seed=4)
    f, X, V = (random_feature(rng, 1, 5, 3, C) for _ in range(3))
    base = _state_run(parallel_dk, store, fork, p, f, X, V)
    perm = np.array([3, 0, 4, 1, 2])
    moved = fork.permuted(perm)
    inverse = np.argsort(perm)
    out = _state_run(parallel_dk, store, moved, p, f[:, inverse], X[:, inverse], V[:, inverse])
    np.testing.assert_allclose(out[:, perm], base, rtol=0, atol=1e-13)


def test_kinematics_update(rng):
    topo = chain(2)
    p, store = _setup(topo)
    X, V, a = (random_feature(rng, 1, 2, 3, C) for _ in range(3))
    tape = Tape()
    scope = Scope(tape, store, "block.0")
    state = BlockState(tape.constant(X), tape.constant(V), 2)
    rest = kinematics_update(scope, state, tape.constant(np.zeros_like(a)))
    assert np.array_equal(rest.V.value, V)
    assert np.array_equal(rest.X.value, X + V)
    assert rest.layer == 3

    store.set("block.0.v_update", np.eye(C))
    tape = Tape()
    state = BlockState(tape.constant(X), tape.constant(V))
    moved = kinematics_update(Scope(tape, store, "block.0"), state, tape.constant(a))
    np.testing.assert_allclose(moved.X.value - X - V, a, atol=1e-14)


def test_centroid_update(rng):
    topo = chain(4)
    p, store = _setup(topo, seed=6)
    column_sums = store["block.0.phi_c"].sum(axis=0)
    np.testing.assert_allclose(column_sums, 1.0, atol=1e-14)

    def centroid(X):
        tape = Tape()
        return centroid_update(Scope(tape, store, "block.0"), BlockState(tape.constant(X), tape.constant(X))).value

    assert np.array_equal(centroid(np.zeros((1, 4, 3, C))), np.zeros((1, 3)))
    X = random_feature(rng, 2, 4, 3, C)
    shift = np.array([10.0, -4.0, 0.5])
    np.testing.assert_allclose(centroid(X + shift[:, None]), centroid(X) + shift, atol=1e-12)

    store.set("block.0.phi_c", np.eye(C))
    c = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]])
    same = np.broadcast_to(c, (1, 4, 3, C))
    np.testing.assert_allclose(centroid(same)[0], c.mean(axis=1))


def test_project_centroid_columns(rng):
    w = rng.normal(size=(5, 3))
    np.testing.assert_allclose(project_centroid_columns(w).sum(axis=0), 1.0, atol=1e-14)
    once = project_centroid_columns(w)
    assert np.array_equal(project_centroid_columns(once), once)


def test_oracle_trivial_link():
    X = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    V = np.zeros((2, 3))
    a_root = np.array([0.0, -9.81, 0.0])
    f = np.stack([np.zeros(3), a_root])
    out = iterative_dk_oracle(a_root, [0, 1], X, V, f)
    np.testing.assert_allclose(out[1], a_root, atol=1e-15)


def test_oracle_rejects_degenerate_link():
    X = np.zeros((2, 3))
    with pytest.raises(DomainError):
        iterative_dk_oracle(np.zeros(3), [0, 1], X, np.zeros((2, 3)), np.zeros((2, 3)))


def test_oracle_translation_leaves_relative_accelerations(rng):
    X, V, f = (rng.normal(size=(3, 3)) for _ in range(3))
    a_root = rng.normal(size=3)
    base = iterative_dk_oracle(a_root, [0, 1, 2], X, V, f)
    moved = iterative_dk_oracle(a_root, [0, 1, 2], X + np.array([5.0, -2.0, 1.0]), V, f)
    np.testing.assert_allclose(np.diff(moved, axis=0), np.diff(base, axis=0), atol=1e-12)


def test_taped_iterative_dk_matches_oracle(rng):
    topo = chain(4)
    f, X, V = (random_feature(rng, 1, 4, 3, C) for _ in range(3))
    tape = Tape()
    out = iterative_dk(tape.constant(f), BlockState(tape.constant(X), tape.constant(V)), topo).value
    expected = iterative_dk_oracle(f[0, 0], [0, 1, 2, 3], X[0], V[0], f[0])
    np.testing.assert_allclose(out[0], expected, atol=1e-12)


def test_iterative_dk_group_roots_take_their_force(rng, fork):
    f, X, V = (random_feature(rng, 1, 5, 3, C) for _ in range(3))
    tape = Tape()
    out = iterative_dk(tape.constant(f), BlockState(tape.constant(X), tape.constant(V)), fork).value
    assert np.array_equal(out[0, 0], f[0, 0])
    assert np.array_equal(out[0, 3], f[0, 3])


GRAVITY = 9.81


def _double_pendulum_rhs(state, l1, l2, m1, m2):
    t1, t2, w1, w2 = state
    delta = t1 - t2
    den = 2 * m1 + m2 - m2 * np.cos(2 * delta)
    a1 = (-GRAVITY * (2 * m1 + m2) * np.sin(t1) - m2 * GRAVITY * np.sin(t1 - 2 * t2)
          - 2 * np.sin(delta) * m2 * (w2 ** 2 * l2 + w1 ** 2 * l1 * np.cos(delta))) / (l1 * den)
    a2 = (2 * np.sin(delta) * (w1 ** 2 * l1 * (m1 + m2) + GRAVITY * (m1 + m2) * np.cos(t1)
                               + w2 ** 2 * l2 * m2 * np.cos(delta))) / (l2 * den)
    return np.array([w1, w2, a1, a2])


def _positions(state, l1, l2):
    t1, t2 = state[0], state[1]
    p1 = np.array([l1 * np.sin(t1), -l1 * np.cos(t1), 0.0])
    p2 = p1 + np.array([l2 * np.sin(t2), -l2 * np.cos(t2), 0.0])
    return p1, p2


def _velocities(state, l1, l2):
    t1, t2, w1, w2 = state
    v1 = np.array([l1 * np.cos(t1) * w1, l1 * np.sin(t1) * w1, 0.0])
    v2 = v1 + np.array([l2 * np.cos(t2) * w2, l2 * np.sin(t2) * w2, 0.0])
    return v1, v2


def test_oracle_matches_simulated_double_pendulum():
    l1, l2, m1, m2 = 1.0, 0.7, 1.0, 0.5
    dt = 1e-4
    steps = 10001
    state = np.array([1.1, -0.4, 0.0, 0.3])
    states = [state]
    for _ in range(steps):
        k1 = _double_pendulum_rhs(state, l1, l2, m1, m2)
        k2 = _double_pendulum_rhs(state + 0.5 * dt * k1, l1, l2, m1, m2)
        k3 = _double_pendulum_rhs(state + 0.5 * dt * k2, l1, l2, m1, m2)
        k4 = _double_pendulum_rhs(state + dt * k3, l1, l2, m1, m2)
        state = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        states.append(state)

    gravity = np.array([0.0, -GRAVITY, 0.0])
    for k in np.linspace(500, steps - 500, 20).astype(int):
        p_prev = _positions(states[k - 1], l1, l2)
        p_now = _positions(states[k], l1, l2)
        p_next = _positions(states[k + 1], l1, l2)
        a1, a2 = ((p_next[j] - 2 * p_now[j] + p_prev[j]) / dt ** 2 for j in range(2))
        X = np.stack(p_now)
        V = np.stack(_velocities(states[k], l1, l2))
        f = np.stack([np.zeros(3), gravity])
        out = iterative_dk_oracle(a1, [0, 1], X, V, f)
        assert np.linalg.norm(out[1] - a2) <= 1e-3 * np.linalg.norm(a2)
