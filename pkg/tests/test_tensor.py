import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spectra_ca import tensor as T
from spectra_ca.errors import ContractError, DimensionError, NumericalError
from spectra_ca.tensor import Tape, Tensor


def param(value, name="w"):
    return Tensor(np.asarray(value, dtype=float), name=name, trainable=True)


def grad_of(fn, *params):
    with Tape() as tape:
        out = fn()
    return tape.backward(out)


class TestRecord:
    def test_matmul_shape(self):
        out = T.matmul(np.ones((1, 4)), np.ones((4, 4)))
        assert out.shape == (1, 4)

    def test_softmax_uniform(self):
        np.testing.assert_allclose(T.softmax(np.zeros(3)).data, np.full(3, 1 / 3), rtol=0, atol=1e-15)

    def test_cos_of_zero(self):
        assert np.array_equal(T.cos(np.zeros((2, 3))).data, np.ones((2, 3)))

    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(DimensionError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
            T.matmul(np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(DimensionError, match="add"):
            T.add(np.ones(3), np.ones(4))

    def test_unknown_primitive(self):
        with pytest.raises(ContractError):
            T.record("erf", (np.ones(2),))

    def test_softmax_stable_for_large_logits(self):
        out = T.softmax(np.array([1000.0, 1000.0])).data
        assert np.allclose(out, 0.5)

    def test_no_tape_records_nothing(self):
        w = param([1.0])
        out = T.square(w)
        with Tape() as tape:
            pass
        assert tape.nodes == [] and out.shape == (1,)

    def test_debug_mode_flags_non_finite(self):
        T.set_debug(True)
        try:
            with np.errstate(invalid="ignore"), pytest.raises(NumericalError):
                T.sqrt(np.array([-1.0]))
        finally:
            T.set_debug(False)

    def test_concat_shapes(self):
        out = T.concat([np.ones((2, 3)), np.zeros((2, 1))], axis=1)
        assert out.shape == (2, 4)
        with pytest.raises(DimensionError):
            T.concat([np.ones((2, 3)), np.zeros((3, 1))], axis=1)


class TestBackward:
    def test_power_rule(self):
        w = param([3.0])
        assert grad_of(lambda: T.square(w).sum(), w)["w"][0] == 6.0

    def test_softmax_sum_has_zero_gradient(self):
        w = param([0.3, -1.2, 2.0])
        np.testing.assert_allclose(grad_of(lambda: T.softmax(w).sum())["w"], 0.0, atol=1e-15)

    def test_non_scalar_output_rejected(self):
        w = param([1.0, 2.0])
        with Tape() as tape:
            out = T.square(w)
        with pytest.raises(ContractError):
            tape.backward(out)

    def test_untrainable_leaves_get_nothing(self):
        w, c = param([2.0]), Tensor([5.0], name="c")
        g = grad_of(lambda: T.mul(w, c).sum())
        assert set(g) == {"w"} and g["w"][0] == 5.0

    def test_unreachable_parameter_gets_zero(self):
        a, b = param([1.0], "a"), param([2.0], "b")
        with Tape() as tape:
            T.square(b)
            out = T.square(a).sum()
        g = tape.backward(out)
        assert g["a"][0] == 2.0 and g["b"][0] == 0.0

    def test_tape_reusable_after_clear(self):
        w = param([2.0])
        tape = Tape()
        with tape:
            first = tape.backward(T.square(w).sum())
        tape.clear()
        with tape:
            second = tape.backward(T.square(w).sum())
        assert first["w"][0] == second["w"][0] == 4.0

    def test_duplicate_names_rejected(self):
        a, b = param([1.0], "w"), param([1.0], "w")
        with pytest.raises(ContractError):
            with Tape():
                T.add(a, b)

    def test_broadcast_gradient_sums(self):
        w = param([1.0, 2.0, 3.0])
        g = grad_of(lambda: T.mul(np.ones((4, 3)), w).sum())
        np.testing.assert_array_equal(g["w"], [4.0, 4.0, 4.0])

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(-3, 3),
           w=arrays(np.float64, 4, elements=st.floats(-2, 2)))
    def test_backward_is_linear(self, a, b, w):
        p = param(w)
        f = lambda: T.sum_(T.tanh(p))
        h = lambda: T.sum_(T.square(T.sin(p)))
        g_combo = grad_of(lambda: T.add(T.scale(f(), a), T.scale(h(), b)))["w"]
        expected = a * grad_of(f)["w"] + b * grad_of(h)["w"]
        np.testing.assert_allclose(g_combo, expected, rtol=0, atol=1e-12)


# every primitive against the finite-difference oracle at smooth random points
PRIMITIVES = {
    "add": lambda p, c: T.add(p, c),
    "sub": lambda p, c: T.sub(c, p),
    "mul": lambda p, c: T.mul(p, c),
    "division": lambda p, c: T.div(c, T.add(T.square(p), 1.0)),
    "matmul": lambda p, c: T.matmul(T.reshape(p, (2, 3)), T.reshape(c, (3, 2))),
    "scale": lambda p, c: T.scale(p, -2.5),
    "reshape": lambda p, c: T.mul(T.reshape(p, (3, 2)), T.reshape(c, (3, 2))),
    "transpose": lambda p, c: T.mul(T.transpose(T.reshape(p, (2, 3))), T.reshape(c, (3, 2))),
    "slice": lambda p, c: T.mul(p[1:5], c[:4]),
    "concat": lambda p, c: T.concat([p, T.square(p)], axis=0),
    "sum": lambda p, c: T.sum_(T.reshape(T.mul(p, c), (2, 3)), axis=0),
    "mean": lambda p, c: T.mean(T.reshape(T.mul(p, c), (2, 3)), axis=1, keepdims=True),
    "cos": lambda p, c: T.cos(p),
    "sin": lambda p, c: T.sin(p),
    "exp": lambda p, c: T.exp(p),
    "tanh": lambda p, c: T.tanh(p),
    "softplus": lambda p, c: T.softplus(p),
    "softmax": lambda p, c: T.mul(T.softmax(T.reshape(p, (2, 3))), T.reshape(c, (2, 3))),
    "square": lambda p, c: T.square(p),
    "sqrt": lambda p, c: T.sqrt(T.add(T.square(p), 0.5)),
}


@pytest.mark.parametrize("kind", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    p = param(rng.uniform(-1, 1, 6))
    c = rng.uniform(-1, 1, 6)
    weights = rng.uniform(0.5, 1.5, 64)

    def loss():
        out = PRIMITIVES[kind](p, c)
        flat = T.reshape(out, (-1,))
        return T.sum_(T.mul(flat, weights[:flat.shape[0]]))

    assert T.fd_gradient_check(loss, {"w": p}, h=1e-6) < 1e-6


class TestFdGradientCheck:
    def test_quadratic(self):
        w = param([0.7, -1.3])
        err = T.fd_gradient_check(lambda: T.sum_(T.square(T.sub(w, 0.2))), {"w": w}, h=1e-3)
        assert err < 1e-9

    def test_linear(self):
        w = param([0.7, -1.3, 2.0])
        err = T.fd_gradient_check(lambda: T.sum_(T.mul(w, [1.0, -2.0, 3.0])), {"w": w}, h=1e-4)
        assert err < 1e-12

    def test_detects_wrong_gradient(self):
        # exp(w) * exp(w) with one factor hidden from the tape: half the true slope
        w = param([0.5])

        def bad():
            return T.mul(T.exp(w), Tensor(np.exp(w.data)))

        assert T.fd_gradient_check(bad, {"w": w}) > 0.4

    def test_restores_parameters(self):
        w = param([0.1, 0.2])
        before = w.data.copy()
        T.fd_gradient_check(lambda: T.sum_(T.exp(w)), {"w": w})
        assert np.array_equal(w.data, before)

    def test_non_finite_loss(self):
        w = param([0.0])
        with np.errstate(all="ignore"), pytest.raises(NumericalError):
            T.fd_gradient_check(lambda: T.div(T.Tensor([1.0]), T.square(w)), {"w": w})

    def test_rejects_bad_step(self):
        w = param([0.0])
        with pytest.raises(ContractError):
            T.fd_gradient_check(lambda: T.sum_(w), {"w": w}, h=0.0)

    def test_extended_precision_refuses_active_tape(self):
        with Tape():
            with pytest.raises(ContractError):
                with T.extended_precision():
                    pass


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    first = T.softmax(T.tanh(T.matmul(a, b))).data
    second = T.softmax(T.tanh(T.matmul(a, b))).data
    assert first.tobytes() == second.tobytes()


def test_item_and_scalar_promotion():
    t = Tensor(2.5)
    assert t.shape == (1,) and t.item() == 2.5
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()
    with pytest.raises(ContractError):
        Tensor([1.0], trainable=True)
