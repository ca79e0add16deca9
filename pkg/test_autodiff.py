import numpy as np
import pytest

from conftest import random_feature
from ggmotion import autodiff as ad
from ggmotion import geom
from ggmotion.autodiff import ParamStore, Scope, Tape
from ggmotion.errors import ConfigurationError, UsageError


def _store(**arrays):
    store = ParamStore()
    for path, value in arrays.items():
        store.add(path, value)
    return store


def test_linear_gradients():
    store = _store(w=np.array([[2.0], [3.0]]))
    tape = Tape()
    x = tape.constant(np.array([[1.0, 4.0]]))
    loss = ad.reduce_sum(ad.matmul(x, tape.param(store, "w")))
    ad.backward(tape, loss, store)
    np.testing.assert_allclose(store.grads["w"], [[1.0], [4.0]])


def test_repeated_param_requests_share_one_node():
    store = _store(a=np.array(3.0))
    tape = Tape()
    a1 = tape.param(store, "a")
    a2 = tape.param(store, "a")
    assert a1.id == a2.id
    tape.gradients(a1 * a2, store)
    assert store.grads["a"] == pytest.approx(6.0)


def test_unreached_parameters_get_zero_gradients():
    store = _store(used=np.ones(2), unused=np.ones((2, 2)))
    tape = Tape()
    tape.gradients(ad.reduce_sum(tape.param(store, "used")), store)
    assert np.array_equal(store.grads["unused"], np.zeros((2, 2)))
    np.testing.assert_allclose(store.grads["used"], [1.0, 1.0])


def test_broadcast_gradients_are_reduced():
    store = _store(b=np.zeros(3))
    tape = Tape()
    x = tape.constant(np.ones((4, 3)))
    tape.gradients(ad.reduce_sum(x + tape.param(store, "b")), store)
    np.testing.assert_allclose(store.grads["b"], [4.0, 4.0, 4.0])


def test_take_and_scatter_add_are_adjoint():
    store = _store(x=np.arange(6.0).reshape(3, 2))
    tape = Tape()
    picked = ad.take(tape.param(store, "x"), [0, 2, 2], axis=0)
    tape.gradients(ad.reduce_sum(picked), store)
    np.testing.assert_allclose(store.grads["x"], [[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]])

    tape = Tape()
    summed = ad.scatter_add(tape.param(store, "x"), [1, 1, 0], 2, axis=0)
    np.testing.assert_allclose(summed.value, [[4.0, 5.0], [2.0, 4.0]])


def test_ndarray_on_the_left_defers_to_var():
    store = _store(a=np.ones(2))
    tape = Tape()
    out = np.array([2.0, 3.0]) * tape.param(store, "a")
    assert isinstance(out, ad.Var)
    np.testing.assert_allclose(out.value, [2.0, 3.0])


def test_col_norm_gradient_at_origin_is_zero():
    store = _store(x=np.zeros((3, 2)))
    tape = Tape()
    tape.gradients(ad.reduce_sum(ad.col_norm(tape.param(store, "x"))), store)
    assert np.array_equal(store.grads["x"], np.zeros((3, 2)))


def test_backward_rejects_non_scalar_and_foreign_nodes():
    store = _store(x=np.ones(3))
    tape = Tape()
    x = tape.param(store, "x")
    with pytest.raises(UsageError):
        tape.backward(x)
    other = Tape()
    with pytest.raises(UsageError):
        ad.add(x, other.constant(1.0))
    with pytest.raises(UsageError):
        tape.param(_store(x=np.ones(3)), "x")


def test_param_store_validation():
    store = _store(a=np.ones(2))
    with pytest.raises(ConfigurationError):
        store.add("a", np.ones(2))
    with pytest.raises(ConfigurationError):
        store.add("b", np.array([np.inf]))
    with pytest.raises(ConfigurationError):
        store.set("a", np.ones(3))
    with pytest.raises(ConfigurationError):
        store["missing"]
    assert store.count() == 2


def test_scope_paths():
    store = _store(**{"block.0.w": np.ones(1)})
    scope = Scope(Tape(), store).child("block").child(0)
    assert scope.path("w") == "block.0.w"
    assert scope.has("w") and not scope.has("v")


def test_forward_lifts_arrays():
    tape = Tape()
    out = ad.forward(tape, lambda a, b: a * b, np.array(2.0), np.array(5.0))
    assert float(out.value) == 10.0


def _composite_program(tape: Tape, params: ParamStore):
    scope = Scope(tape, params)
    x = tape.constant(geom.Rng(3).normal(size=(4, 3, 2)))
    h = ad.matmul(x, scope("w"))
    g = ad.row_l2_normalize(ad.gram(h, h))
    mixed = ad.einsum("...bdc,...ba->...adc", h, ad.tanh(g))
    crossed = ad.cross(mixed, h)
    norms = ad.col_norm(crossed + scope("shift"))
    return ad.reduce_mean(ad.sigmoid(norms) * ad.absolute(ad.reduce_sum(h, axis=-2)) / ad.clamp_min(norms, 1e-3))


def test_grad_check_passes_on_composite_program():
    rng = geom.Rng(11)
    params = _store(w=rng.normal(size=(2, 2)), shift=rng.normal(size=(3, 2)))
    report = ad.grad_check(_composite_program, params, rng.split("coords"), n_coords=6)
    assert report.passed, report.to_dict()
    assert report.n_coords == 6


def test_grad_check_detects_a_wrong_gradient():
    params = _store(x=np.array([0.7, -0.3]))

    def bad_square(g):
        return (g,)

    def program(tape, store):
        x = tape.param(store, "x")
        # value x^2 but a vjp of the identity
        y = tape.record("bad", (x,), x.value * x.value, bad_square)
        return ad.reduce_sum(y)

    report = ad.grad_check(program, params, geom.Rng(0), n_coords=4)
    assert not report.passed
    assert report.worst_path == "x"


def test_grad_check_restores_parameters():
    params = _store(w=np.array([[0.5, -1.0], [2.0, 0.25]]), shift=np.zeros((3, 2)))
    before = params["w"].copy()
    ad.grad_check(_composite_program, params, geom.Rng(2), n_coords=5)
    assert np.array_equal(params["w"], before)


def test_cross_gradient_is_b_cross_c(rng):
    a = random_feature(rng, 6, 3, 2)
    b = random_feature(rng, 6, 3, 2)
    c = random_feature(rng, 6, 3, 2)
    store = _store(a=a)
    tape = Tape()
    loss = ad.reduce_sum(ad.cross(tape.param(store, "a"), tape.constant(b)) * tape.constant(c))
    tape.gradients(loss, store)
    np.testing.assert_allclose(store.grads["a"], geom.cross_cols(b, c), atol=1e-12)
