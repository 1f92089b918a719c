"""Adaptive-adjacency graph recurrent blocks: GRU cell with graph-convolution
gates, sequence encoder, and auto-regressive decoder."""

import numpy as np

from . import tensor as T
from .nn import init_linear, parameter
from .tensor import ContractError, ShapeError, Tensor


class NodeEmbedding:
    """Learnable per-node embedding that induces the adjacency matrix."""

    def __init__(self, n, hidden, rng):
        if n < 1 or hidden < 1:
            raise ContractError("node count and hidden width must be >= 1")
        self.n = n
        self.hidden = hidden
        bound = 1.0 / np.sqrt(hidden)
        self.e = parameter(rng.uniform(-bound, bound, size=(n, hidden)))

    def named_parameters(self, prefix):
        yield prefix + ".e", self.e


def adaptive_adjacency(emb):
    """Row-stochastic adjacency softmax(relu(E E^T)); differentiable in E."""
    e = emb.e if isinstance(emb, NodeEmbedding) else emb
    scores = T.relu(T.matmul(e, _transpose(e)))
    return T.softmax_rows(scores)


def _transpose(a):
    def back(g):
        return (g.T,)

    return T._node(a.data.T, (a,), back)


class GateParams:
    def __init__(self, d_in, hidden, rng):
        self.w, self.b = init_linear(rng, d_in + hidden, hidden)

    def named_parameters(self, prefix):
        yield prefix + ".w", self.w
        yield prefix + ".b", self.b


class AgcrnCell:
    """GRU cell whose gate transforms are one-hop graph convolutions."""

    def __init__(self, d_in, hidden, rng):
        self.d_in = d_in
        self.hidden = hidden
        self.u = GateParams(d_in, hidden, rng)
        self.r = GateParams(d_in, hidden, rng)
        self.c = GateParams(d_in, hidden, rng)

    def named_parameters(self, prefix):
        for gate_name in ("u", "r", "c"):
            yield from getattr(self, gate_name).named_parameters(f"{prefix}.{gate_name}")


def gcn(gate, x_t, h_prev, adj):
    """Single-hop convolution: adj @ [x_t || h_prev] @ W + b."""
    z = T.concat_last(x_t, h_prev)
    if z.data.shape[-1] != gate.w.data.shape[0]:
        raise ShapeError(
            f"gcn: concatenated width {z.data.shape[-1]} != expected {gate.w.data.shape[0]}")
    mixed = T.graph_mix(adj, z)
    return T.linear(mixed, gate.w, gate.b)


def cell_step_composed(cell, x_t, h_prev, adj):
    """cell_step spelled out of the primitive tape ops (reference path)."""
    u = T.sigmoid(gcn(cell.u, x_t, h_prev, adj))
    r = T.sigmoid(gcn(cell.r, x_t, h_prev, adj))
    c = T.tanh(gcn(cell.c, x_t, T.mul(r, h_prev), adj))
    return T.lerp_gate(u, h_prev, c)


def _outer_mix_grad(g, z):
    """d(loss)/d(adj) for out = adj @ z: sum over batch of g_b @ z_b^T,
    done as one GEMM on node-major layouts."""
    n = g.shape[-2]
    if g.ndim == 2:
        return g @ z.T
    gm = np.ascontiguousarray(np.moveaxis(g, -2, 0)).reshape(n, -1)
    zm = np.ascontiguousarray(np.moveaxis(z, -2, 0)).reshape(n, -1)
    return gm @ zm.T


def cell_step(cell, x_t, h_prev, adj):
    """One recurrence: u/r gates, candidate state, convex state update.

    Fused into a single tape node; numerically identical to
    cell_step_composed but with far less per-batch overhead.
    """
    d_in = cell.d_in
    if x_t.data.shape[-1] != d_in:
        raise ShapeError(f"cell_step: input width {x_t.data.shape[-1]} != {d_in}")
    wu, bu = cell.u.w, cell.u.b
    wr, br = cell.r.w, cell.r.b
    wc, bc = cell.c.w, cell.c.b

    a = adj.data
    z1 = np.concatenate([x_t.data, h_prev.data], axis=-1)
    m1 = np.matmul(a, z1)
    u = 1.0 / (1.0 + np.exp(-(np.matmul(m1, wu.data) + bu.data)))
    r = 1.0 / (1.0 + np.exp(-(np.matmul(m1, wr.data) + br.data)))
    z2 = np.concatenate([x_t.data, r * h_prev.data], axis=-1)
    m2 = np.matmul(a, z2)
    c = np.tanh(np.matmul(m2, wc.data) + bc.data)
    out = u * h_prev.data + (1.0 - u) * c

    def back(g):
        width = m1.shape[-1]
        hid = u.shape[-1]

        def flat(arr, cols):
            return arr.reshape(-1, cols)

        gu = g * (h_prev.data - c)
        gc = g * (1.0 - u)
        gh = g * u

        gc_lin = gc * (1.0 - c * c)
        gwc = flat(m2, width).T @ flat(gc_lin, hid)
        gbc = flat(gc_lin, hid).sum(axis=0)
        gm2 = np.matmul(gc_lin, wc.data.T)
        gz2 = np.matmul(a.T, gm2)
        gadj = _outer_mix_grad(gm2, z2)
        gx = gz2[..., :d_in]
        g_rh = gz2[..., d_in:]
        gr = g_rh * h_prev.data
        gh = gh + g_rh * r

        gu_lin = gu * u * (1.0 - u)
        gr_lin = gr * r * (1.0 - r)
        gwu = flat(m1, width).T @ flat(gu_lin, hid)
        gbu = flat(gu_lin, hid).sum(axis=0)
        gwr = flat(m1, width).T @ flat(gr_lin, hid)
        gbr = flat(gr_lin, hid).sum(axis=0)
        gm1 = np.matmul(gu_lin, wu.data.T) + np.matmul(gr_lin, wr.data.T)
        gz1 = np.matmul(a.T, gm1)
        gadj = gadj + _outer_mix_grad(gm1, z1)
        gx = gx + gz1[..., :d_in]
        gh = gh + gz1[..., d_in:]
        return gx, gh, gadj, gwu, gbu, gwr, gbr, gwc, gbc

    return T._node(out, (x_t, h_prev, adj, wu, bu, wr, br, wc, bc), back)


class GraphSeqModel:
    """An embedding plus a recurrent cell, acting as encoder or decoder."""

    def __init__(self, n, d_in, hidden, role, rng):
        if role not in ("encoder", "decoder"):
            raise ContractError(f"unknown role {role!r}")
        self.role = role
        self.embedding = NodeEmbedding(n, hidden, rng)
        self.cell = AgcrnCell(d_in, hidden, rng)

    def named_parameters(self, prefix):
        yield from self.embedding.named_parameters(prefix + ".embedding")
        yield from self.cell.named_parameters(prefix + ".cell")


def encode_sequence(model, seq, adj=None):
    """Fold the cell over time frames starting from a zero hidden state.

    seq has shape (T, n, d_in) or (B, T, n, d_in); the time axis is folded
    and the final hidden state (n, h) or (B, n, h) is returned.
    """
    if model.role != "encoder":
        raise ContractError("encode_sequence requires an encoder model")
    time_axis = 0 if seq.data.ndim == 3 else 1
    steps = seq.data.shape[time_axis]
    if steps == 0:
        raise ContractError("encode_sequence on an empty sequence")
    if adj is None:
        adj = adaptive_adjacency(model.embedding)
    h_shape = seq.data.shape[:time_axis] + (seq.data.shape[-2], model.cell.hidden)
    h = Tensor(np.zeros(h_shape))
    for t in range(steps):
        x_t = T.take(seq, t, axis=time_axis)
        h = cell_step(model.cell, x_t, h, adj)
    return h


def decode_ar(model, first_token, h_init, steps, adj=None):
    """Auto-regressive unroll: the first input token is `first_token`, each
    later step consumes the previous hidden output. Returns the stacked
    hidden outputs with the time axis where the batch layout puts it."""
    if model.role != "decoder":
        raise ContractError("decode_ar requires a decoder model")
    if steps < 1:
        raise ContractError("decode_ar needs steps >= 1")
    if adj is None:
        adj = adaptive_adjacency(model.embedding)
    outputs = []
    token, h = first_token, h_init
    for _ in range(steps):
        h = cell_step(model.cell, token, h, adj)
        outputs.append(h)
        token = h
    time_axis = 0 if first_token.data.ndim == 2 else 1
    return T.stack(outputs, axis=time_axis)
