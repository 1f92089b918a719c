"""Parameters, initialization helpers, batch normalization, and Adam."""

import numpy as np

from .tensor import ContractError, Tensor, _node


class EmptyBatchError(ValueError):
    pass


def parameter(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def init_linear(rng, fan_in, fan_out):
    """Uniform in +-1/sqrt(fan_in); returns (W, b) parameters."""
    bound = 1.0 / np.sqrt(fan_in)
    w = parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    b = parameter(rng.uniform(-bound, bound, size=(fan_out,)))
    return w, b


class BatchNorm:
    """Batch normalization over the flattened leading axes, features last.

    Running statistics are plain buffers (no gradients); train mode updates
    them by exponential moving average with unbiased batch variance.
    """

    def __init__(self, features, momentum=0.1, eps=1e-5):
        self.features = features
        self.momentum = momentum
        self.eps = eps
        self.gamma = parameter(np.ones(features))
        self.beta = parameter(np.zeros(features))
        self.running_mean = Tensor(np.zeros(features))
        self.running_var = Tensor(np.ones(features))

    def __call__(self, x, training):
        data = x.data
        if data.shape[-1] != self.features:
            raise ContractError(
                f"batch_norm expects {self.features} features, got {data.shape[-1]}")
        flat = data.reshape(-1, self.features)
        batch = flat.shape[0]
        if batch == 0:
            raise EmptyBatchError("batch_norm on an empty batch")

        eps = self.eps
        gamma, beta = self.gamma, self.beta
        if training:
            mean = flat.mean(axis=0)
            var = flat.var(axis=0)
            if batch > 1:
                unbiased = var * batch / (batch - 1)
            else:
                unbiased = var
            m = self.momentum
            self.running_mean.data = (1 - m) * self.running_mean.data + m * mean
            self.running_var.data = (1 - m) * self.running_var.data + m * unbiased
            inv_std = 1.0 / np.sqrt(var + eps)
            xhat = (data - mean) * inv_std

            def back(g):
                gflat = g.reshape(-1, self.features)
                xh = xhat.reshape(-1, self.features)
                ggamma = (gflat * xh).sum(axis=0)
                gbeta = gflat.sum(axis=0)
                gxhat = gflat * gamma.data
                gx = (inv_std / batch) * (
                    batch * gxhat
                    - gxhat.sum(axis=0)
                    - xh * (gxhat * xh).sum(axis=0)
                )
                return gx.reshape(data.shape), ggamma, gbeta

            out = xhat * gamma.data + beta.data
            return _node(out, (x, gamma, beta), back)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var.data + eps)
            xhat = (data - self.running_mean.data) * inv_std

            def back(g):
                gflat = g.reshape(-1, self.features)
                xh = xhat.reshape(-1, self.features)
                ggamma = (gflat * xh).sum(axis=0)
                gbeta = gflat.sum(axis=0)
                gx = g * (gamma.data * inv_std)
                return gx, ggamma, gbeta

            out = xhat * gamma.data + beta.data
            return _node(out, (x, gamma, beta), back)

    def named_parameters(self, prefix):
        yield prefix + ".gamma", self.gamma
        yield prefix + ".beta", self.beta

    def named_buffers(self, prefix):
        yield prefix + ".running_mean", self.running_mean
        yield prefix + ".running_var", self.running_var


class Adam:
    """Standard Adam with bias correction over a named parameter list."""

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}
        self.t = {name: 0 for name, p in self.params}

    def step(self):
        for name, p in self.params:
            if p.grad is None:
                raise ContractError(f"adam_step: parameter {name!r} has no gradient")
            g = p.grad
            self.t[name] += 1
            t = self.t[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** t)
            v_hat = self.v[name] / (1 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.zero_grad()

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None
