"""Personalized predictor: encoder-decoder forecaster conditioned on a prompt,
plus the combined reconstruction/prediction loss with its adaptive weight."""

from dataclasses import dataclass

from . import tensor as T
from .graph import GraphSeqModel, decode_ar, encode_sequence
from .nn import init_linear


class PersonalizedPredictor:
    """Graph-recurrent encoder over history, auto-regressive decoder seeded by
    the prompt token, and a linear head mapping hidden width to one value."""

    def __init__(self, n, feat_width, hidden, horizon, rng):
        self.horizon = horizon
        self.encoder = GraphSeqModel(n, feat_width, hidden, "encoder", rng)
        self.decoder = GraphSeqModel(n, hidden, hidden, "decoder", rng)
        self.head_w, self.head_b = init_linear(rng, hidden, 1)

    def predict(self, x, p_g, horizon=None):
        """x: (T, n, H) or (B, T, n, H); p_g: (n, h) or (B, n, h).
        Returns predictions of shape (T', n) or (B, T', n)."""
        steps = self.horizon if horizon is None else horizon
        h_final = encode_sequence(self.encoder, x)
        z = decode_ar(self.decoder, p_g, h_final, steps)
        return T.squeeze_last(T.linear(z, self.head_w, self.head_b))

    def named_parameters(self, prefix):
        yield from self.encoder.named_parameters(prefix + ".encoder")
        yield from self.decoder.named_parameters(prefix + ".decoder")
        yield prefix + ".head_w", self.head_w
        yield prefix + ".head_b", self.head_b


@dataclass
class LossParts:
    ae: object          # scalar Tensor (reconstruction loss), zero when disabled
    pre: object         # scalar Tensor (prediction loss)
    total: object       # scalar Tensor actually differentiated
    alpha: float        # adaptive weight applied to the reconstruction term
    alpha_clamped: bool


def combined_loss(x, x_hat, y, y_hat, *, alpha_through=False,
                  pre_guard=1e-8, alpha_max=1e4):
    """Prediction loss plus reconstruction loss weighted by their ratio.

    alpha = L_ae / L_pre is treated as a per-batch constant unless
    `alpha_through` is set, in which case gradients flow through the ratio.
    When L_pre falls below `pre_guard` the ratio is clamped to [0, alpha_max].
    """
    l_pre = T.mean_abs_error(y_hat, y)
    if x_hat is None:
        l_ae = T.Tensor(0.0)
        return LossParts(l_ae, l_pre, l_pre, 0.0, False)

    l_ae = T.mean_abs_error(x_hat, x)
    ae_val, pre_val = l_ae.item(), l_pre.item()
    clamped = False
    if pre_val <= pre_guard:
        if ae_val == 0.0:
            alpha = 0.0
        else:
            alpha = min(ae_val / max(pre_val, pre_guard), alpha_max)
            clamped = True
        total = T.add(l_pre, T.scale(l_ae, alpha))
        return LossParts(l_ae, l_pre, total, alpha, clamped)

    alpha = ae_val / pre_val
    if alpha > alpha_max:
        alpha = alpha_max
        clamped = True
    if alpha_through and not clamped:
        weight = T.div(l_ae, l_pre)
        total = T.add(l_pre, T.mul(weight, l_ae))
    else:
        total = T.add(l_pre, T.scale(l_ae, alpha))
    return LossParts(l_ae, l_pre, total, alpha, clamped)
