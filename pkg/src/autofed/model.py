"""Per-client model assembly: personalized predictor plus optional
prompt-generating representor, with stable parameter naming."""

import numpy as np

from .predictor import PersonalizedPredictor
from .representor import Representor
from .tensor import Tensor


class ClientModel:
    """Everything one client trains.

    `with_prompt=False` drops the representor entirely (the plain backbone
    used by local/fedavg/fedper runs); the decoder is then seeded with a
    zero token. `with_ae=False` keeps the representor but removes the
    denoiser stage.
    """

    def __init__(self, n, feat_width, hidden, horizon, seed,
                 with_prompt=True, with_ae=True, bn_momentum=0.1, bn_eps=1e-5):
        self.n = n
        self.feat_width = feat_width
        self.hidden = hidden
        self.horizon = horizon
        self.with_prompt = with_prompt
        rng = np.random.default_rng(seed)
        self.pp = PersonalizedPredictor(n, feat_width, hidden, horizon, rng)
        if with_prompt:
            self.fr = Representor(n, feat_width, hidden, rng, use_ae=with_ae,
                                  bn_momentum=bn_momentum, bn_eps=bn_eps)
        else:
            self.fr = None

    def forward(self, x, training):
        """Returns (y_hat, x_hat); x_hat is None without a denoiser."""
        if self.fr is not None:
            p_g, x_hat = self.fr.make_prompt(x, training)
        else:
            shape = x.data.shape[:-3] + (self.n, self.hidden)
            p_g, x_hat = Tensor(np.zeros(shape)), None
        return self.pp.predict(x, p_g), x_hat

    def named_parameters(self):
        yield from self.pp.named_parameters("pp")
        if self.fr is not None:
            yield from self.fr.named_parameters("fr")

    def named_buffers(self):
        if self.fr is not None:
            yield from self.fr.named_buffers("fr")

    def named_state(self):
        """Parameters followed by buffers (the full federated namespace)."""
        yield from self.named_parameters()
        yield from self.named_buffers()
