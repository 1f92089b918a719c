import numpy as np
import pytest

from autofed import tensor as T
from autofed.nn import Adam, BatchNorm, EmptyBatchError, parameter
from autofed.tensor import ContractError, Tensor
from conftest import finite_difference_check


class TestBatchNorm:
    def test_hand_example(self):
        bn = BatchNorm(1, eps=1e-14)
        out = bn(Tensor([[0.0], [2.0]]), training=True)
        assert np.allclose(out.data, [[-1.0], [1.0]], atol=1e-6)

    def test_zero_variance_batch(self):
        bn = BatchNorm(1)
        out = bn(Tensor([[3.0], [3.0], [3.0]]), training=True)
        assert np.allclose(out.data, 0.0, atol=1e-2)

    def test_zero_gamma_gives_beta(self, rng):
        bn = BatchNorm(2)
        bn.gamma.data[...] = 0.0
        bn.beta.data[...] = [1.5, -2.0]
        out = bn(Tensor(rng.normal(size=(4, 2))), training=True)
        assert np.allclose(out.data, [1.5, -2.0])

    def test_empty_batch_rejected(self):
        bn = BatchNorm(2)
        with pytest.raises(EmptyBatchError):
            bn(Tensor(np.empty((0, 2))), training=True)

    def test_train_output_standardized(self, rng):
        bn = BatchNorm(3)
        out = bn(Tensor(rng.normal(size=(64, 3)) * 5 + 2), training=True)
        assert np.all(np.abs(out.data.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(out.data.var(axis=0) - 1.0) < 1e-6)

    def test_running_statistics_updated_then_used_in_eval(self, rng):
        bn = BatchNorm(1, momentum=0.1)
        batch = rng.normal(size=(32, 1)) + 4.0
        bn(Tensor(batch), training=True)
        expected_mean = 0.1 * batch.mean()
        assert bn.running_mean.data[0] == pytest.approx(expected_mean)
        unbiased = batch.var() * 32 / 31
        assert bn.running_var.data[0] == pytest.approx(0.9 + 0.1 * unbiased)
        before = bn.running_mean.data.copy()
        out = bn(Tensor(batch), training=False)
        expected = (batch - before[0]) / np.sqrt(bn.running_var.data[0] + bn.eps)
        assert np.allclose(out.data, expected)
        assert np.array_equal(bn.running_mean.data, before)

    def test_flattens_leading_axes(self, rng):
        bn = BatchNorm(2)
        x = rng.normal(size=(4, 3, 2))
        out = bn(Tensor(x), training=True)
        flat = x.reshape(-1, 2)
        norm = (flat - flat.mean(axis=0)) / np.sqrt(flat.var(axis=0) + bn.eps)
        assert np.allclose(out.data, norm.reshape(4, 3, 2))

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, training, rng):
        bn = BatchNorm(2)
        bn.running_mean.data[...] = [0.3, -0.2]
        bn.running_var.data[...] = [1.4, 0.8]
        x = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=(5, 2)))
        mean_before = bn.running_mean.data.copy()
        var_before = bn.running_var.data.copy()

        def loss():
            # keep running stats fixed so the loss is a pure function
            bn.running_mean.data[...] = mean_before
            bn.running_var.data[...] = var_before
            return T.total_sum(T.mul(bn(x, training=training), w))

        finite_difference_check(loss, [x, bn.gamma, bn.beta])


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = parameter([1.0, -2.0])
        opt = Adam([("p", p)])
        p.grad = np.zeros(2)
        opt.step()
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_first_step_bias_corrected(self):
        p = parameter([1.0])
        opt = Adam([("p", p)], lr=1e-3)
        p.grad = np.array([1.0])
        opt.step()
        # m_hat = v_hat = 1 after bias correction, so the step is ~lr
        assert p.data[0] == pytest.approx(1.0 - 1e-3 / (1.0 + 1e-8), abs=1e-12)
        assert p.grad is None

    def test_missing_grad_names_parameter(self):
        p = parameter([1.0])
        opt = Adam([("layer.weight", p)])
        with pytest.raises(ContractError, match="layer.weight"):
            opt.step()

    def test_deterministic_across_runs(self, rng):
        grads = rng.normal(size=(10, 3))

        def run():
            p = parameter([1.0, 2.0, 3.0])
            opt = Adam([("p", p)], lr=0.01)
            for g in grads:
                p.grad = g.copy()
                opt.step()
            return p.data.copy()

        a, b = run(), run()
        assert np.array_equal(a, b)

    def test_matches_reference_update(self, rng):
        # straight-line reference of the update rule over several steps
        p = parameter([0.5, -0.3])
        opt = Adam([("p", p)], lr=0.05)
        ref = np.array([0.5, -0.3])
        m = np.zeros(2)
        v = np.zeros(2)
        for t in range(1, 6):
            g = rng.normal(size=2)
            p.grad = g.copy()
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.05 * (m / (1 - 0.9 ** t)) / (
                np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(p.data, ref, atol=1e-15)
