import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simecs import net
from simecs.net import AdamState, Layer, NetworkParams, ObjectiveConfig
from simecs.similarity import TargetSpec

from .gradcheck import random_problem, relative_deviation
from .oracles import forward_loops, simec_loss_loops


def linear_net(w, rel, bias=None, bounds=None):
    return NetworkParams([Layer(np.asarray(w, float), bias, "linear")], np.asarray(rel, float), bounds)


# --- init ------------------------------------------------------------------

def test_init_is_deterministic():
    a = net.init([5, 4, 3], 6, k=2, seed=11)
    b = net.init([5, 4, 3], 6, k=2, seed=11)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    c = net.init([5, 4, 3], 6, k=2, seed=12)
    assert not np.array_equal(a.arrays()[0], c.arrays()[0])


def test_init_bounds_and_structure():
    for seed in range(20):
        p = net.init([1, 1], 1, seed=seed)
        assert abs(p.encoder[0].weights[0, 0]) <= np.sqrt(3.0)
    p = net.init([400, 300, 10], 20, k=3, seed=0)
    assert abs(p.encoder[0].weights.mean()) < 0.05
    w = p.encoder[0].weights
    assert np.abs(w).max() <= np.sqrt(6 / 700)
    assert p.encoder[0].activation == "tanh" and p.encoder[-1].activation == "linear"
    assert all(np.array_equal(layer.bias, np.zeros_like(layer.bias)) for layer in p.encoder)
    assert p.relation.shape == (3, 10, 20)
    assert net.init([4, 2], 3, embed_bias=False).encoder[0].bias is None


def test_init_rejects_bad_chain():
    with pytest.raises(ValueError):
        net.init([4], 3)
    with pytest.raises(ValueError):
        net.init([4, 0, 2], 3)


def test_params_validation():
    with pytest.raises(ValueError, match="linear"):
        NetworkParams([Layer(np.eye(2), None, "tanh")], np.eye(2))
    with pytest.raises(ValueError, match="chain"):
        NetworkParams([Layer(np.ones((2, 3))), Layer(np.ones((2, 2)))], np.eye(2))
    with pytest.raises(ValueError, match="relation"):
        NetworkParams([Layer(np.eye(2))], np.ones((3, 4)))
    with pytest.raises(ValueError, match="bounds"):
        NetworkParams([Layer(np.eye(2))], np.eye(2), (1.0, 1.0))


# --- forward ---------------------------------------------------------------

def test_forward_identity_and_zero():
    x = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_array_equal(net.forward_embed(linear_net(np.eye(3), np.eye(3), np.zeros(3)), x), x)
    np.testing.assert_array_equal(net.forward_embed(linear_net(np.zeros((3, 2)), np.eye(2)), x), 0.0)
    np.testing.assert_array_equal(net.forward_full(linear_net(np.eye(3), np.eye(3)), x)[:, :, 0], x)


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(1)
    p = net.init([4, 6, 3], 5, seed=1)
    p = p.with_arrays([a + 0.2 * rng.standard_normal(a.shape) for a in p.arrays()])
    x = rng.standard_normal((7, 4))
    layers = [(layer.weights, layer.bias, layer.activation) for layer in p.encoder]
    y = net.forward_embed(p, x)
    np.testing.assert_allclose(y, forward_loops(layers, x), atol=1e-12, rtol=0)
    full = net.forward_full(p, x)
    np.testing.assert_allclose(full[:, :, 0], y @ p.relation[0], atol=1e-12, rtol=0)


def test_forward_full_k1_is_exact_matmul():
    p = net.init([4, 5, 3], 6, seed=2)
    x = np.random.default_rng(2).standard_normal((9, 4))
    assert np.array_equal(net.forward_full(p, x)[:, :, 0], net.forward_embed(p, x) @ p.relation[0])


def test_forward_bounded_range():
    p = net.init([3, 2], 4, k=2, seed=3, output_bounds=(1.0, 5.0))
    p = p.with_arrays([30 * a for a in p.arrays()])
    out = net.forward_full(p, 10 * np.random.default_rng(3).standard_normal((50, 3)))
    assert out.shape == (50, 4, 2)
    assert out.min() >= 1.0 and out.max() <= 5.0


def test_forward_shape_error():
    with pytest.raises(ValueError, match="input"):
        net.forward_embed(net.init([3, 2], 2), np.ones((4, 5)))


# --- loss ------------------------------------------------------------------

def test_loss_perfect_fit_is_zero():
    p = net.init([4, 3], 5, k=2, seed=4)
    x = np.random.default_rng(4).standard_normal((6, 4))
    target = TargetSpec(net.forward_full(p, x), kind="rectangular")
    assert net.loss(p, x, target, ObjectiveConfig()) == 0.0


def test_loss_zero_prediction():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((6, 6))
    s = a + a.T
    p = linear_net(np.zeros((3, 2)), np.zeros((2, 6)))
    assert net.loss(p, rng.standard_normal((6, 3)), TargetSpec(s), ObjectiveConfig()) == pytest.approx(
        np.mean(s**2), rel=1e-14)


@pytest.mark.parametrize("seed", range(6))
def test_loss_matches_loop_oracle(seed):
    p, x, target, obj = random_problem(seed, sym=seed % 2 == 0, orth=True, mask=seed % 3 == 0,
                                       bounds=seed % 2 == 1)
    if obj.sym_mask is not None:
        obj = ObjectiveConfig(obj.lambda_sym, obj.lambda_orth, obj.lambda_l2, obj.sym_target, None)
    obj = ObjectiveConfig(obj.lambda_sym, obj.lambda_orth, 0.05, obj.sym_target, None)
    y = net.forward_embed(p, x)
    weights = [a for a, f in zip(p.arrays(), p.weight_flags()) if f]
    want = simec_loss_loops(y, p.relation, target.values, target.mask, obj.lambda_sym, obj.sym_target,
                            obj.lambda_orth, obj.lambda_l2, weights, p.output_bounds)
    assert net.loss(p, x, target, obj) == pytest.approx(want, rel=1e-12, abs=1e-14)


def test_lambda_sym_rejected_for_tensor_targets():
    p = net.init([3, 2], 4, k=2)
    t = TargetSpec(np.zeros((4, 4, 2)))
    obj = ObjectiveConfig(lambda_sym=1.0, sym_target=np.zeros((4, 4)))
    with pytest.raises(ValueError, match="k == 1"):
        net.loss(p, np.ones((4, 3)), t, obj)


def test_objective_validation():
    with pytest.raises(ValueError, match="sym_target"):
        ObjectiveConfig(lambda_sym=1.0)
    with pytest.raises(ValueError, match=">= 0"):
        ObjectiveConfig(lambda_orth=-1.0)
    with pytest.raises(ValueError, match="square"):
        ObjectiveConfig(lambda_sym=1.0, sym_target=np.ones((2, 3)))


def test_all_masked_is_an_error():
    p = net.init([2, 2], 3)
    t = TargetSpec(np.ones((3, 3)), mask=np.zeros((3, 3)))
    with pytest.raises(ValueError, match="no observed"):
        net.loss(p, np.ones((3, 2)), t, ObjectiveConfig())


# --- gradients -------------------------------------------------------------

def test_gradient_vanishes_at_constructed_optimum():
    p = net.init([4, 5, 3], 6, seed=6)
    x = np.random.default_rng(6).standard_normal((6, 4))
    target = TargetSpec(net.forward_full(p, x), kind="rectangular")
    g = net.backward(p, x, target, ObjectiveConfig())
    assert max(np.linalg.norm(a) for a in g.arrays()) < 1e-10


def test_masked_column_has_exactly_zero_gradient():
    rng = np.random.default_rng(7)
    p = net.init([4, 3], 5, seed=7)
    mask = np.ones((6, 5))
    mask[:, 2] = 0.0
    target = TargetSpec(rng.standard_normal((6, 5)), mask, "rectangular")
    g = net.backward(p, rng.standard_normal((6, 4)), target, ObjectiveConfig())
    assert np.all(g.relation[0][:, 2] == 0.0)
    assert np.any(g.relation[0][:, 1] != 0.0)


def test_regularizer_gradients_only_reach_relation_weights():
    rng = np.random.default_rng(8)
    p = net.init([4, 3], 5, seed=8)
    x = rng.standard_normal((5, 4))
    s = rng.standard_normal((5, 5))
    s = s + s.T
    perfect = TargetSpec(net.forward_full(p, x), kind="rectangular")
    obj = ObjectiveConfig(lambda_sym=1.0, lambda_orth=1.0, sym_target=s)
    g = net.backward(p, x, perfect, obj)
    assert np.all(g.encoder[0].weights == 0.0)
    assert np.any(g.relation != 0.0)


def test_gradient_matches_finite_differences_spec_shape():
    rng = np.random.default_rng(9)
    p = net.init([7, 4, 3], 5, k=2, seed=9)
    p = p.with_arrays([a + 0.1 * rng.standard_normal(a.shape) for a in p.arrays()])
    x = rng.standard_normal((6, 7))
    target = TargetSpec(rng.standard_normal((6, 5, 2)), kind="rectangular")
    obj = ObjectiveConfig(lambda_orth=0.5, lambda_l2=0.1)
    dev = relative_deviation(net.backward(p, x, target, obj), net.finite_diff_grad(p, x, target, obj))
    assert dev < 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_check_random_configurations(seed):
    p, x, target, obj = random_problem(seed)
    dev = relative_deviation(net.backward(p, x, target, obj),
                             net.finite_diff_grad(p, x, target, obj, h=1e-5))
    assert dev < 1e-4


def test_finite_diff_exact_on_quadratic_part():
    # with no output bounds and no sym/orth terms the loss is quadratic in W_l
    rng = np.random.default_rng(10)
    p = net.init([3, 4, 2], 4, seed=10)
    x = rng.standard_normal((5, 3))
    target = TargetSpec(rng.standard_normal((5, 4)), kind="rectangular")
    obj = ObjectiveConfig()
    num = net.finite_diff_grad(p, x, target, obj, h=1e-2)
    np.testing.assert_allclose(num.relation, net.backward(p, x, target, obj).relation, atol=1e-11)


def test_finite_diff_second_order_convergence():
    p, x, target, obj = random_problem(3, sym=False, orth=True, mask=False, bounds=True)
    exact = net.backward(p, x, target, obj)

    def err(h):
        num = net.finite_diff_grad(p, x, target, obj, h=h)
        return max(np.abs(a - b).max() for a, b in zip(exact.arrays(), num.arrays()))

    ratio = err(2e-2) / err(1e-2)
    assert 3.0 < ratio < 5.0


def test_finite_diff_rejects_bad_step():
    p, x, target, obj = random_problem(0)
    with pytest.raises(ValueError):
        net.finite_diff_grad(p, x, target, obj, h=0.0)


def test_masked_entries_do_not_affect_loss_or_gradient():
    rng = np.random.default_rng(11)
    p = net.init([4, 5, 3], 6, seed=11)
    x = rng.standard_normal((6, 4))
    vals = rng.standard_normal((6, 6))
    vals = vals + vals.T
    mask = np.ones((6, 6))
    mask[1, 4] = mask[4, 1] = 0.0
    other = vals.copy()
    other[1, 4] = other[4, 1] = 99.0
    obj_a = ObjectiveConfig(lambda_sym=0.5, sym_target=vals, sym_mask=mask)
    obj_b = ObjectiveConfig(lambda_sym=0.5, sym_target=other, sym_mask=mask)
    la, ga = net.loss_and_grad(p, x, TargetSpec(vals, mask), obj_a)
    lb, gb = net.loss_and_grad(p, x, TargetSpec(other, mask), obj_b)
    assert la == lb
    for a, b in zip(ga.arrays(), gb.arrays()):
        assert np.array_equal(a, b)


# --- Adam ------------------------------------------------------------------

def test_adam_zero_gradient_is_fixed_point():
    arrays = [np.arange(4.0).reshape(2, 2), np.ones(3)]
    state = AdamState.zeros_like(arrays)
    new, state = net.adam_step(arrays, [np.zeros((2, 2)), np.zeros(3)], state, lr=0.1)
    for a, b in zip(arrays, new):
        assert np.array_equal(a, b)
    assert state.t == 1


def test_adam_first_step_is_signed_lr():
    g = np.array([3.0, -0.2, 1e-3, -50.0])
    new, _ = net.adam_step([np.zeros(4)], [g], AdamState.zeros_like([g]), lr=0.01, eps=1e-12)
    np.testing.assert_allclose(new[0], -0.01 * np.sign(g), atol=1e-9)


def test_adam_descends_convex_quadratic():
    rng = np.random.default_rng(12)
    q = rng.standard_normal((5, 5))
    a = q @ q.T + np.eye(5)
    b = rng.standard_normal(5)
    f = lambda w: 0.5 * w @ a @ w - b @ w  # noqa: E731
    w = [np.zeros(5)]
    state = AdamState.zeros_like(w)
    values = []
    for _ in range(200):
        w, state = net.adam_step(w, [a @ w[0] - b], state, lr=0.01)
        values.append(f(w[0]))
    assert np.all(np.diff(values[5:]) < 0)


def test_adam_frozen_and_errors():
    arrays = [np.ones(2), np.ones(2)]
    new, _ = net.adam_step(arrays, [np.ones(2), np.ones(2)], AdamState.zeros_like(arrays), 0.1,
                           frozen=(1,))
    assert new[1] is arrays[1] and not np.array_equal(new[0], arrays[0])
    with pytest.raises(ValueError, match="learning rate"):
        net.adam_step(arrays, arrays, AdamState.zeros_like(arrays), lr=0.0)
    with pytest.raises(ValueError):
        net.adam_step(arrays, [np.ones(3), np.ones(2)], AdamState.zeros_like(arrays), lr=0.1)


def test_orthogonality_penalty_decorrelates_relation_rows():
    from simecs.simec import identity_factorize

    rng = np.random.default_rng(13)
    y = rng.standard_normal((30, 4))
    target = TargetSpec(y @ y.T)
    model, _ = identity_factorize(target, 4, lambda_orth=10.0, lr=1e-2, epochs=3000, lr_final=0.05)
    w = model.params.relation[0]
    g = w @ w.T
    off = np.abs(g - np.diag(np.diag(g))).max()
    assert off < 1e-3 * np.abs(np.diag(g)).mean()
