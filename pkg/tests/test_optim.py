import numpy as np
import pytest

from fieldmanifold.autodiff import NumericError
from fieldmanifold.optim import Adam


def reference_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam in float64."""
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_single_scalar_step():
    opt = Adam(lr=0.1)
    out = opt.step({"p": np.array([1.0], np.float32)}, {"p": np.array([1.0], np.float32)})
    assert opt.t == 1
    assert out["p"][0] == pytest.approx(0.9, abs=1e-6)


def test_zero_gradient_is_identity_for_all_t():
    opt = Adam(lr=0.1)
    p = {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}
    for t in range(1, 6):
        p2 = opt.step(p, {"w": np.zeros((2, 3), np.float32)})
        np.testing.assert_array_equal(p2["w"], p["w"])
        assert opt.t == t


def test_identical_params_identical_updates():
    opt = Adam(lr=0.05)
    p = {"a": np.full(4, 0.3, np.float32), "b": np.full(4, 0.3, np.float32)}
    g = np.linspace(-1, 1, 4).astype(np.float32)
    for _ in range(3):
        p = opt.step(p, {"a": g, "b": g})
    np.testing.assert_array_equal(p["a"], p["b"])


def test_matches_reference_over_many_steps():
    rng = np.random.default_rng(0)
    p0 = rng.normal(size=(5, 3))
    grads = [rng.normal(size=(5, 3)) for _ in range(30)]
    opt = Adam(lr=1e-2)
    p = {"x": p0.astype(np.float32)}
    for g in grads:
        p = opt.step(p, {"x": g.astype(np.float32)})
    np.testing.assert_allclose(p["x"], reference_adam(p0, grads, 1e-2), rtol=1e-4, atol=1e-5)
    assert np.all(opt.state.v["x"] >= 0)


def test_row_sparse_update_leaves_other_rows_untouched():
    opt = Adam(lr=0.1)
    p = {"z": np.ones((5, 2), np.float32)}
    out = opt.step(p, {"z": np.ones((2, 2), np.float32)}, rows={"z": np.array([1, 3])})
    np.testing.assert_array_equal(out["z"][[0, 2, 4]], 1.0)
    assert np.all(out["z"][[1, 3]] < 1.0)
    np.testing.assert_array_equal(opt.state.m["z"][[0, 2, 4]], 0.0)


def test_nan_gradient_names_parameter():
    opt = Adam()
    with pytest.raises(NumericError, match="bad"):
        opt.step({"bad": np.zeros(2, np.float32)}, {"bad": np.array([0.0, np.nan], np.float32)})
    assert opt.t == 0


def test_does_not_mutate_inputs():
    opt = Adam(lr=0.1)
    w = np.ones(3, np.float32)
    opt.step({"w": w}, {"w": np.ones(3, np.float32)})
    np.testing.assert_array_equal(w, 1.0)
