import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memefx import autograd as ag
from memefx.autograd import Tensor
from memefx.errors import ContractError, DimensionError, LabelError, NonFiniteError
from memefx.nn import LSTM, Conv2D, Dense

from conftest import gradient_errors


def param(rng, *shape):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)


class TestForward:
    def test_matmul_identity(self):
        b = Tensor([[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal((Tensor(np.eye(2)) @ b).data, b.data)

    def test_matmul_manual(self):
        out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[5.0], [6.0]])
        assert out.data.tolist() == [[17.0], [39.0]]

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))

    def test_elementwise_examples(self):
        assert ag.elementwise("mul", Tensor([1.0, 2, 3]), Tensor([0.0, 0, 0])).data.tolist() == [0, 0, 0]
        assert ag.elementwise("sigmoid", Tensor([0.0])).data.tolist() == [0.5]
        assert ag.elementwise("add", Tensor([1.0, 2]), Tensor([3.0, 4])).data.tolist() == [4, 6]

    def test_binary_ops_refuse_broadcast(self):
        with pytest.raises(DimensionError):
            ag.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
        with pytest.raises(DimensionError):
            ag.mul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_add_bias_is_the_only_broadcast(self):
        out = ag.add_bias(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0]))
        assert out.data.tolist() == [[1, 2, 3], [1, 2, 3]]
        with pytest.raises(DimensionError):
            ag.add_bias(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0]))

    def test_cross_entropy_uniform(self):
        loss = ag.softmax_cross_entropy(Tensor(np.zeros((4, 3))), [0, 1, 2, 0])
        assert float(loss.data) == pytest.approx(math.log(3), abs=1e-15)

    def test_cross_entropy_confident(self):
        loss = ag.softmax_cross_entropy(Tensor([[10.0, 0.0, 0.0]]), [0])
        expected = -math.log(math.exp(10) / (math.exp(10) + 2))
        assert float(loss.data) == pytest.approx(expected, rel=1e-12)
        assert float(loss.data) == pytest.approx(9.08e-5, rel=1e-3)

    def test_cross_entropy_label_error(self):
        with pytest.raises(LabelError):
            ag.softmax_cross_entropy(Tensor(np.zeros((1, 3))), [5])

    def test_cross_entropy_is_stable_for_huge_logits(self):
        loss = ag.softmax_cross_entropy(Tensor([[1000.0, -1000.0, 0.0]]), [1])
        assert float(loss.data) == pytest.approx(2000.0)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_is_an_error(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.nan])
        with pytest.raises(NonFiniteError):
            Tensor([1e200]) * 1e200

    def test_conv_matches_direct_loops(self, rng):
        x = rng.normal(size=(2, 5, 6, 3))
        w = rng.normal(size=(3, 3, 3, 4))
        b = rng.normal(size=4)
        out = ag.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2).data
        assert out.shape == (2, 2, 2, 4)
        for n in range(2):
            for i in range(2):
                for j in range(2):
                    patch = x[n, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
                    for f in range(4):
                        assert out[n, i, j, f] == pytest.approx((patch * w[..., f]).sum() + b[f], rel=1e-12)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        w = param(rng, 3, 4)
        ag.backward(w.sum())
        assert np.array_equal(w.grad, np.ones((3, 4)))

    def test_quadratic(self):
        w = Tensor([3.0], requires_grad=True)
        ag.backward((w * w).sum())
        assert w.grad.tolist() == [6.0]

    def test_non_scalar_loss_rejected(self, rng):
        with pytest.raises(ContractError):
            ag.backward(param(rng, 2, 2) * 2.0)

    def test_second_backward_without_forward_rejected(self, rng):
        w = param(rng, 2)
        loss = (w * w).sum()
        ag.backward(loss)
        with pytest.raises(ContractError, match="consumed"):
            ag.backward(loss)

    def test_no_grad_records_nothing(self, rng):
        w = param(rng, 2)
        with ag.no_grad():
            loss = (w * w).sum()
        assert not loss.requires_grad

    def test_shared_subexpression_accumulates(self):
        w = Tensor([2.0], requires_grad=True)
        y = w * w
        ag.backward((y + y).sum())
        assert w.grad.tolist() == [8.0]


def _check(loss_fn, params):
    errs = gradient_errors(loss_fn, params)
    assert max(errs.values()) < 1e-4, errs


@pytest.mark.parametrize("seed", range(3))
class TestGradientCheck:
    def test_matmul_and_elementwise(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = param(rng, 3, 4), param(rng, 4, 2), param(rng, 3, 2)
        _check(lambda: ((a @ b).tanh() * c.sigmoid() + (a @ b).relu()).sum(),
               {"a": a, "b": b, "c": c})

    def test_bias_concat_slice_reshape(self, seed):
        rng = np.random.default_rng(seed)
        x, bias, y = param(rng, 2, 3), param(rng, 3), param(rng, 2, 2)
        _check(lambda: (ag.concat([ag.add_bias(x, bias), y], axis=1)[:, 1:4].reshape(3, 2).tanh()).sum(),
               {"x": x, "bias": bias, "y": y})

    def test_softmax_cross_entropy(self, seed):
        rng = np.random.default_rng(seed)
        z = param(rng, 5, 3)
        _check(lambda: ag.softmax_cross_entropy(z * 3.0, [0, 1, 2, 2, 1]), {"z": z})

    def test_mse(self, seed):
        rng = np.random.default_rng(seed)
        z = param(rng, 4, 3)
        target = rng.uniform(0, 1, size=(4, 3))
        _check(lambda: ag.mse(z.sigmoid(), target), {"z": z})

    def test_lstm_with_mask(self, seed):
        rng = np.random.default_rng(seed)
        lstm = LSTM(3, 4, rng)
        xs = [param(rng, 2, 3) for _ in range(3)]
        mask = np.array([[1, 1, 0], [1, 1, 1]])
        params = dict(lstm.named_parameters())
        params.update({f"x{i}": x for i, x in enumerate(xs)})
        _check(lambda: (lstm(xs, mask) * 1.7).tanh().sum(), params)

    def test_conv(self, seed):
        rng = np.random.default_rng(seed)
        conv = Conv2D(3, 2, (3, 3), 2, rng)
        x = param(rng, 2, 5, 5, 3)
        params = dict(conv.named_parameters(), x=x)
        _check(lambda: conv(x).tanh().sum(), params)

    def test_dense(self, seed):
        rng = np.random.default_rng(seed)
        d = Dense(4, 3, rng)
        x = param(rng, 2, 4)
        _check(lambda: d(x).sigmoid().sum(), dict(d.named_parameters(), x=x))


def test_lstm_masked_steps_carry_state(rng):
    lstm = LSTM(2, 3, rng)
    xs = [Tensor(rng.normal(size=(1, 2))) for _ in range(3)]
    short = lstm(xs[:2])
    padded = lstm(xs, np.array([[1, 1, 0]]))
    assert np.array_equal(short.data, padded.data)


def test_determinism_same_seed(rng):
    def run():
        r = np.random.default_rng(99)
        lstm = LSTM(3, 4, r)
        xs = [Tensor(r.normal(size=(2, 3))) for _ in range(3)]
        loss = lstm(xs).sum()
        ag.backward(loss)
        return loss.data.copy(), [p.grad.copy() for p in lstm.parameters()]

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes()
    assert all(a.tobytes() == b.tobytes() for a, b in zip(g1, g2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_no_nan_for_bounded_inputs(seed):
    rng = np.random.default_rng(seed)
    lstm = LSTM(4, 5, rng)
    for p in lstm.parameters():
        p.data = rng.uniform(-1, 1, size=p.shape)
    conv = Conv2D(3, 2, (3, 3), 2, rng)
    xs = [Tensor(rng.uniform(-10, 10, size=(3, 4))) for _ in range(4)]
    h = lstm(xs)
    z = conv(Tensor(rng.uniform(-10, 10, size=(3, 5, 5, 3))))
    loss = ag.softmax_cross_entropy(h[:, 0:3] * 10.0, [0, 1, 2]) + ag.mse(z.sigmoid(), np.zeros(z.shape))
    assert np.isfinite(loss.data)


class TestAdam:
    def test_zero_grad_leaves_params(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.zeros(2)
        state = ag.AdamState()
        ag.adam_step([p], state)
        assert p.data.tolist() == [1.0, -2.0]

    def test_first_step_is_lr(self):
        p = Tensor([0.0], requires_grad=True)
        p.grad = np.array([1.0])
        ag.adam_step([p], ag.AdamState(lr=0.1))
        assert p.data[0] == pytest.approx(-0.1, rel=1e-7)

    def test_step_count_and_grad_reset(self):
        p = Tensor([0.0], requires_grad=True)
        state = ag.AdamState()
        for expected in (1, 2, 3):
            p.grad = np.array([0.5])
            ag.adam_step([p], state)
            assert state.step_count == expected
            assert p.grad.tolist() == [0.0]

    def test_missing_grad(self):
        with pytest.raises(ContractError):
            ag.adam_step([Tensor([1.0], requires_grad=True)], ag.AdamState())

    def test_converges_on_quadratic(self):
        w = Tensor([5.0, -3.0], requires_grad=True)
        state = ag.AdamState(lr=0.1)
        for _ in range(500):
            ag.backward((w * w).sum())
            ag.adam_step([w], state)
        assert np.abs(w.data).max() < 1e-2


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    params = {"lstm.W_x": rng.normal(size=(3, 8)), "b": rng.normal(size=5), "scalar": np.array(np.pi),
              "ünï": rng.normal(size=(2, 1, 3))}
    path = tmp_path / "model.fkt"
    ag.save_checkpoint(path, params)
    raw = path.read_bytes()
    assert raw[:4] == b"FKT1"
    loaded = ag.load_checkpoint(path)
    assert list(loaded) == list(params)
    for k in params:
        assert loaded[k].shape == params[k].shape
        assert loaded[k].tobytes() == np.asarray(params[k]).tobytes()
    ag.save_checkpoint(tmp_path / "again.fkt", loaded)
    assert (tmp_path / "again.fkt").read_bytes() == raw


def test_checkpoint_layout(tmp_path):
    ag.save_checkpoint(tmp_path / "m.fkt", {"w": np.array([[1.0, 2.0]])})
    raw = (tmp_path / "m.fkt").read_bytes()
    expected = (b"FKT1" + (1).to_bytes(8, "little") + b"w" + (2).to_bytes(8, "little")
                + (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
                + np.array([1.0, 2.0], dtype="<f8").tobytes())
    assert raw == expected
