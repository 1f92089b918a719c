import numpy as np
import pytest

from autofed import tensor as T
from autofed.representor import AeDenoiser, ClientAdapter, Representor
from autofed.tensor import ShapeError, Tensor
from conftest import finite_difference_check


def zero_params(obj, prefix="m"):
    for _, p in obj.named_parameters(prefix):
        p.data[...] = 0.0


class TestAeDenoiser:
    def test_zero_weights_zero_output(self, rng):
        ae = AeDenoiser(1, 3, rng)
        zero_params(ae)
        p = ae.encode(Tensor(rng.normal(size=(2, 3, 1))))
        assert np.array_equal(p.data, np.zeros((2, 3, 3)))
        assert np.array_equal(ae.decode(p).data, np.zeros((2, 3, 1)))

    def test_shape_contract(self, rng):
        ae = AeDenoiser(1, 4, rng)
        x = Tensor(rng.normal(size=(2, 3, 1)))
        p = ae.encode(x)
        assert p.shape == (2, 3, 4)
        assert ae.decode(p).shape == x.shape

    def test_wrong_feature_width(self, rng):
        ae = AeDenoiser(2, 4, rng)
        with pytest.raises(ShapeError):
            ae.encode(Tensor(np.zeros((2, 3, 3))))
        with pytest.raises(ShapeError):
            ae.decode(Tensor(np.zeros((2, 3, 3))))

    def test_scalar_oracle(self, rng):
        ae = AeDenoiser(1, 2, rng)
        x = 0.7
        h1 = np.maximum(ae.enc_w1.data[0] * x + ae.enc_b1.data, 0.0)
        expected = h1 @ ae.enc_w2.data + ae.enc_b2.data
        out = ae.encode(Tensor([[[x]]]))
        assert np.allclose(out.data[0, 0], expected, atol=1e-15)

    def test_identity_capable(self, rng):
        # with hidden >= input width, weights can be set so x round-trips
        ae = AeDenoiser(1, 2, rng)
        zero_params(ae)
        ae.enc_w1.data[...] = [[1.0, 0.0]]
        ae.enc_w2.data[...] = np.eye(2)
        ae.dec_w1.data[...] = np.eye(2)
        ae.dec_w2.data[...] = [[1.0], [0.0]]
        x = Tensor(rng.uniform(0.1, 2.0, size=(3, 2, 1)))
        assert np.allclose(ae.decode(ae.encode(x)).data, x.data, atol=1e-15)

    def test_gradients(self, rng):
        ae = AeDenoiser(1, 2, rng)
        x = Tensor(rng.normal(size=(2, 2, 1)), requires_grad=True)
        target = x.detach()
        params = [x] + [p for _, p in ae.named_parameters("ae")]
        finite_difference_check(
            lambda: T.mean_abs_error(ae.decode(ae.encode(x)), target), params)


class TestClientAdapter:
    def test_batch_norm_shift_survives_zero_linears(self, rng):
        adapter = ClientAdapter(3, rng)
        adapter.lin1_w.data[...] = 0.0
        adapter.lin1_b.data[...] = 0.0
        adapter.lin2_w.data[...] = 0.0
        adapter.lin2_b.data[...] = 0.0
        adapter.bn2.beta.data[...] = [0.5, -1.0, 2.0]
        out = adapter(Tensor(rng.normal(size=(4, 3))), training=True)
        assert np.allclose(out.data, [0.5, -1.0, 2.0])

    def test_different_bn_statistics_change_output(self, rng):
        a = ClientAdapter(3, rng)
        b = ClientAdapter(3, rng)
        for (_, pa), (_, pb) in zip(a.named_parameters("a"), b.named_parameters("b")):
            pb.data[...] = pa.data
        b.bn1.running_mean.data[...] = a.bn1.running_mean.data + 0.5
        x = Tensor(rng.normal(size=(4, 3)))
        out_a = a(x, training=False)
        out_b = b(x, training=False)
        assert not np.allclose(out_a.data, out_b.data)


class TestRepresentor:
    def test_prompt_shape(self, rng):
        fr = Representor(n=3, feat_width=1, hidden=4, rng=rng)
        p_g, x_hat = fr.make_prompt(Tensor(rng.normal(size=(5, 3, 1))), training=True)
        assert p_g.shape == (3, 4)
        assert x_hat.shape == (5, 3, 1)

    def test_batched_prompt_shape(self, rng):
        fr = Representor(n=3, feat_width=1, hidden=4, rng=rng)
        p_g, x_hat = fr.make_prompt(Tensor(rng.normal(size=(6, 5, 3, 1))),
                                    training=True)
        assert p_g.shape == (6, 3, 4)
        assert x_hat.shape == (6, 5, 3, 1)

    def test_zero_parameters_give_bn_shift(self, rng):
        fr = Representor(n=3, feat_width=1, hidden=2, rng=rng)
        for _, p in fr.named_parameters("fr"):
            p.data[...] = 0.0
        fr.adapter.bn2.beta.data[...] = [1.25, -0.75]
        p_g, _ = fr.make_prompt(Tensor(rng.normal(size=(4, 3, 1))), training=True)
        assert np.allclose(p_g.data, [1.25, -0.75])

    def test_without_ae_consumes_raw_input(self, rng):
        fr = Representor(n=3, feat_width=1, hidden=4, rng=rng, use_ae=False)
        p_g, x_hat = fr.make_prompt(Tensor(rng.normal(size=(5, 3, 1))), training=True)
        assert x_hat is None
        assert p_g.shape == (3, 4)

    def test_eval_mode_deterministic(self, rng):
        fr = Representor(n=2, feat_width=1, hidden=3, rng=rng)
        x = Tensor(rng.normal(size=(4, 2, 1)))
        a, _ = fr.make_prompt(x, training=False)
        b, _ = fr.make_prompt(x, training=False)
        assert np.array_equal(a.data, b.data)

    def test_gradients_reach_every_stage(self, rng):
        fr = Representor(n=2, feat_width=1, hidden=2, rng=rng)
        fr.adapter.bn1.running_mean.data[...] = [0.1, -0.2]
        fr.adapter.bn1.running_var.data[...] = [1.1, 0.9]
        x = Tensor(rng.normal(size=(2, 2, 1)))
        target = Tensor(rng.normal(size=(2, 2)))
        params = [p for _, p in fr.named_parameters("fr")]

        def loss():
            p_g, x_hat = fr.make_prompt(x, training=False)
            return T.add(T.mean_abs_error(p_g, target),
                         T.mean_abs_error(x_hat, x))

        finite_difference_check(loss, params)
