import numpy as np
import pytest

import gradcheck
from fieldmanifold import autodiff as ad
from fieldmanifold.autodiff import NumericError, ShapeError, Tape

OPS = sorted(gradcheck.primitive_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("op", OPS)
def test_primitive_gradients_match_finite_differences(op):
    worst, compared = 0.0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        w, n = gradcheck.check_primitive(op, rng)
        worst, compared = max(worst, w), compared + n
    assert compared > 0
    assert worst < 1e-3, f"{op}: max relative error {worst:.3g}"


def test_forward_examples():
    t = Tape()
    m = ad.matmul(t.const([[1.0, 0.0], [0.0, 1.0]]), t.const([[3.0], [4.0]]))
    np.testing.assert_array_equal(m.value, [[3.0], [4.0]])
    assert ad.sigmoid(t.const(0.0)).value == 0.5
    assert ad.sum(ad.square(t.const([3.0, 4.0]))).value == 25.0


def test_backward_examples():
    t = Tape()
    x = t.leaf(np.array(3.0))
    assert t.backward(ad.square(x))[x] == pytest.approx(6.0)
    t = Tape()
    x = t.leaf(np.array(0.0))
    assert t.backward(ad.sigmoid(x))[x] == pytest.approx(0.25)


def test_random_mlp_against_finite_differences_h_1e_3():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        vals = {"x": rng.uniform(-2, 2, (4, 3)), "w1": rng.normal(0, 1, (3, 6)),
                "w2": rng.normal(0, 1, (6, 6)), "w3": rng.normal(0, 1, (6, 1))}

        def fn(tape, L):
            h = ad.relu(L["x"] @ L["w1"])
            h = ad.relu(h @ L["w2"])
            return ad.sum(ad.square(h @ L["w3"]))

        worst, n, _ = gradcheck.check(fn, vals, h=1e-3)
        assert n > 0 and worst < 1e-3


def test_float32_gradients_close_to_float64_oracle():
    rng = np.random.default_rng(1)
    x, w = rng.uniform(-2, 2, (5, 4)), rng.uniform(-1, 1, (4, 3))
    grads = {}
    for dt in (np.float32, np.float64):
        t = Tape(dt)
        X, W = t.leaf(x), t.leaf(w)
        g = t.backward(ad.mean(ad.sigmoid(X @ W)))
        grads[dt] = g[W]
    assert grads[np.float32].dtype == np.float32
    np.testing.assert_allclose(grads[np.float32], grads[np.float64], rtol=1e-5, atol=1e-7)


def test_leaf_off_path_gets_zero_gradient():
    t = Tape()
    x, y = t.leaf([1.0, 2.0]), t.leaf([[5.0]])
    g = t.backward(ad.sum(ad.square(x)))
    np.testing.assert_array_equal(g[y], [[0.0]])
    np.testing.assert_array_equal(g[x], [2.0, 4.0])


def test_shared_subexpression_accumulates():
    t = Tape()
    x = t.leaf(np.array(2.0))
    y = x * x + x          # dy/dx = 2x + 1
    assert t.backward(y)[x] == pytest.approx(5.0)


def test_backward_needs_scalar():
    t = Tape()
    x = t.leaf([1.0, 2.0])
    with pytest.raises(ShapeError):
        t.backward(x * 2.0)


def test_shape_errors_name_op_and_shapes():
    t = Tape()
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        t.const(np.zeros((2, 3))) @ t.const(np.zeros((2, 3)))
    with pytest.raises(ShapeError, match="add"):
        t.const(np.zeros(3)) + t.const(np.zeros(4))


def test_nonfinite_rejected():
    t = Tape()
    with pytest.raises(NumericError):
        t.leaf([np.nan])
    with pytest.raises(NumericError):
        ad.sqrt(t.const([-1.0]))
    dbg = Tape(debug=True)
    with pytest.raises(NumericError, match="div"), np.errstate(divide="ignore"):
        dbg.const([1.0]) / dbg.const([0.0])


def test_deterministic():
    def go():
        rng = np.random.default_rng(3)
        t = Tape()
        a = t.leaf(rng.normal(size=(4, 4)))
        return t.backward(ad.sum(ad.sigmoid(a @ a)))[a]
    np.testing.assert_array_equal(go(), go())


def test_consts_not_differentiated():
    t = Tape()
    c = t.const([1.0, 2.0])
    out = ad.sum(ad.square(c))
    assert not out.requires_grad
    x = t.leaf([3.0])
    g = t.backward(ad.sum(x * out))
    assert g[x] == pytest.approx(5.0)


def test_kink_signature_tracks_relu_branches():
    def sig(v):
        t = Tape()
        ad.relu(t.const(v))
        return t.kink_signature()
    assert sig([1.0, -1.0]) == sig([2.0, -3.0])
    assert sig([1.0, -1.0]) != sig([1.0, 1.0])
