"""Prompt-generating representor: shared autoencoder denoiser, personalized
graph sequence encoder, and the client-aligned adapter with local batch norm."""

from . import tensor as T
from .graph import GraphSeqModel, encode_sequence
from .nn import BatchNorm, init_linear
from .tensor import ShapeError


class AeDenoiser:
    """Pointwise two-layer autoencoder applied per (frame, node).

    Encoder compresses the raw feature width down to the hidden width; the
    decoder reconstructs the input and feeds only the reconstruction loss.
    All parameters here are shared across clients.
    """

    def __init__(self, feat_width, hidden, rng):
        self.feat_width = feat_width
        self.hidden = hidden
        self.enc_w1, self.enc_b1 = init_linear(rng, feat_width, hidden)
        self.enc_w2, self.enc_b2 = init_linear(rng, hidden, hidden)
        self.dec_w1, self.dec_b1 = init_linear(rng, hidden, hidden)
        self.dec_w2, self.dec_b2 = init_linear(rng, hidden, feat_width)

    def encode(self, x):
        if x.data.shape[-1] != self.feat_width:
            raise ShapeError(
                f"ae_encode expects feature width {self.feat_width}, got {x.data.shape[-1]}")
        h = T.relu(T.linear(x, self.enc_w1, self.enc_b1))
        return T.linear(h, self.enc_w2, self.enc_b2)

    def decode(self, p):
        if p.data.shape[-1] != self.hidden:
            raise ShapeError(
                f"ae_decode expects feature width {self.hidden}, got {p.data.shape[-1]}")
        h = T.relu(T.linear(p, self.dec_w1, self.dec_b1))
        return T.linear(h, self.dec_w2, self.dec_b2)

    def named_parameters(self, prefix):
        for name in ("enc_w1", "enc_b1", "enc_w2", "enc_b2",
                     "dec_w1", "dec_b1", "dec_w2", "dec_b2"):
            yield f"{prefix}.{name}", getattr(self, name)


class ClientAdapter:
    """Two linear+batch-norm blocks with a ReLU between them.

    Linear weights are shared across clients; batch-norm parameters and
    running statistics stay local (the FedBN split).
    """

    def __init__(self, hidden, rng, bn_momentum=0.1, bn_eps=1e-5):
        self.lin1_w, self.lin1_b = init_linear(rng, hidden, hidden)
        self.lin2_w, self.lin2_b = init_linear(rng, hidden, hidden)
        self.bn1 = BatchNorm(hidden, momentum=bn_momentum, eps=bn_eps)
        self.bn2 = BatchNorm(hidden, momentum=bn_momentum, eps=bn_eps)

    def __call__(self, p_l, training):
        h = self.bn1(T.linear(p_l, self.lin1_w, self.lin1_b), training)
        h = T.relu(h)
        return self.bn2(T.linear(h, self.lin2_w, self.lin2_b), training)

    def named_parameters(self, prefix):
        yield prefix + ".lin1_w", self.lin1_w
        yield prefix + ".lin1_b", self.lin1_b
        yield from self.bn1.named_parameters(prefix + ".bn1")
        yield prefix + ".lin2_w", self.lin2_w
        yield prefix + ".lin2_b", self.lin2_b
        yield from self.bn2.named_parameters(prefix + ".bn2")

    def named_buffers(self, prefix):
        yield from self.bn1.named_buffers(prefix + ".bn1")
        yield from self.bn2.named_buffers(prefix + ".bn2")


class Representor:
    """Full prompt pipeline: denoise, encode over time, align across clients.

    With `use_ae=False` the encoder consumes the raw input directly and no
    reconstruction is produced (the "no denoiser" ablation).
    """

    def __init__(self, n, feat_width, hidden, rng, use_ae=True,
                 bn_momentum=0.1, bn_eps=1e-5):
        self.use_ae = use_ae
        self.ae = AeDenoiser(feat_width, hidden, rng) if use_ae else None
        enc_in = hidden if use_ae else feat_width
        self.encoder = GraphSeqModel(n, enc_in, hidden, "encoder", rng)
        self.adapter = ClientAdapter(hidden, rng, bn_momentum, bn_eps)

    def make_prompt(self, x, training):
        """Returns (p_g, x_hat); x_hat is None when the denoiser is disabled."""
        if self.use_ae:
            p = self.ae.encode(x)
            x_hat = self.ae.decode(p)
        else:
            p, x_hat = x, None
        p_l = encode_sequence(self.encoder, p)
        p_g = self.adapter(p_l, training)
        return p_g, x_hat

    def named_parameters(self, prefix):
        if self.ae is not None:
            yield from self.ae.named_parameters(prefix + ".ae")
        yield from self.encoder.named_parameters(prefix + ".encoder")
        yield from self.adapter.named_parameters(prefix + ".adapter")

    def named_buffers(self, prefix):
        yield from self.adapter.named_buffers(prefix + ".adapter")
