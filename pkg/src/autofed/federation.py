"""Server loop, shared/personal partitioning, delta aggregation, and the
shared-store wire format."""

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import batch_arrays
from .metrics import evaluate
from .nn import Adam
from .predictor import combined_loss
from .tensor import Tensor

SHARED = "shared"
PERSONAL = "personal"


class FederationError(ValueError):
    pass


class TrainingDivergence(RuntimeError):
    def __init__(self, round_idx, client_id, detail):
        super().__init__(
            f"non-finite loss at round {round_idx}, client {client_id}: {detail}")
        self.round_idx = round_idx
        self.client_id = client_id


class ParamStore:
    """Ordered name -> (tensor, group) map; the unit of federation."""

    def __init__(self):
        self.entries = OrderedDict()

    def add(self, name, tensor, group):
        if name in self.entries:
            raise FederationError(f"duplicate parameter name {name!r}")
        if group not in (SHARED, PERSONAL):
            raise FederationError(f"unknown group {group!r}")
        self.entries[name] = (tensor, group)

    def items(self):
        return self.entries.items()

    def shared_items(self):
        return [(n, t) for n, (t, g) in self.entries.items() if g == SHARED]

    def personal_items(self):
        return [(n, t) for n, (t, g) in self.entries.items() if g == PERSONAL]

    def shared_arrays(self):
        return OrderedDict((n, t.data.copy()) for n, t in self.shared_items())

    def all_arrays(self):
        return OrderedDict((n, t.data.copy()) for n, (t, _) in self.entries.items())

    def load_shared(self, arrays):
        for name, t in self.shared_items():
            src = arrays[name]
            if src.shape != t.data.shape:
                raise FederationError(
                    f"shape mismatch loading {name!r}: {src.shape} vs {t.data.shape}")
            t.data[...] = src

    def comm_cost(self):
        """Scalar count of the shared entries (Table-style communication unit)."""
        return sum(t.data.size for _, t in self.shared_items())


def partition(model, shared_prefixes):
    """Classify every model parameter and buffer by name prefix."""
    store = ParamStore()
    for name, tensor in model.named_state():
        group = SHARED if any(name.startswith(p) for p in shared_prefixes) else PERSONAL
        store.add(name, tensor, group)
    return store


@dataclass
class FederationConfig:
    rounds: int = 50
    local_epochs: int = 1
    fraction: float = 1.0
    weighting: str = "uniform"  # or "node-weighted"
    seed: int = 0
    batch_size: int = 128
    learning_rate: float = 1e-3
    alpha_through: bool = False
    log_batches: bool = False
    eval_batch_size: int = 256

    def validate(self):
        if self.rounds < 1:
            raise FederationError("rounds must be >= 1")
        if self.local_epochs < 1:
            raise FederationError("local_epochs must be >= 1")
        if not (0.0 < self.fraction <= 1.0):
            raise FederationError("fraction must be in (0, 1]")
        if self.weighting not in ("uniform", "node-weighted"):
            raise FederationError(f"unknown weighting {self.weighting!r}")


class ClientState:
    """One client's model, dataset, partition, and optimizer state."""

    def __init__(self, client_id, model, store, dataset, seed, learning_rate=1e-3):
        self.client_id = client_id
        self.model = model
        self.store = store
        self.dataset = dataset
        self.node_count = model.n
        self.rng = np.random.default_rng(seed)
        self.optimizer = Adam(
            [(n, p) for n, p in model.named_parameters()], lr=learning_rate)


def _train_batches(samples, batch_size, rng):
    order = rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield batch_arrays([samples[i] for i in idx])


def client_update(client, shared_snapshot, config, round_idx=0):
    """One participant's work for a round: load the broadcast shared weights,
    train for the configured local epochs, return the shared delta plus a
    training summary."""
    if config.local_epochs < 1:
        raise FederationError("local_epochs must be >= 1")
    if not client.dataset.train:
        return None

    client.store.load_shared(shared_snapshot)
    before = client.store.shared_arrays()

    losses, alphas, batch_log = [], [], []
    clamp_events = 0
    for _ in range(config.local_epochs):
        for x_arr, y_arr in _train_batches(client.dataset.train,
                                           config.batch_size, client.rng):
            x = Tensor(x_arr)
            y = Tensor(y_arr)
            y_hat, x_hat = client.model.forward(x, training=True)
            parts = combined_loss(x, x_hat, y, y_hat,
                                  alpha_through=config.alpha_through)
            loss_val = parts.total.item()
            if not math.isfinite(loss_val):
                raise TrainingDivergence(round_idx, client.client_id,
                                         f"loss={loss_val}")
            T.backward(parts.total)
            client.optimizer.step()
            losses.append(loss_val)
            alphas.append(parts.alpha)
            clamp_events += int(parts.alpha_clamped)
            if config.log_batches:
                batch_log.append({
                    "loss": loss_val,
                    "loss_pre": parts.pre.item(),
                    "loss_ae": parts.ae.item(),
                    "alpha": parts.alpha,
                })

    after = client.store.shared_arrays()
    delta = OrderedDict((n, after[n] - before[n]) for n in before)
    summary = {
        "client": client.client_id,
        "train_loss": float(np.mean(losses)) if losses else 0.0,
        "alpha": float(np.mean(alphas)) if alphas else 0.0,
        "alpha_clamped_batches": clamp_events,
        "batches": len(losses),
    }
    if config.log_batches:
        summary["batch_log"] = batch_log
    return delta, summary


def aggregate(theta, deltas, weighting="uniform", node_counts=None):
    """theta' = theta + weighted sum of client deltas."""
    if not deltas:
        raise FederationError("aggregate called with no deltas")
    if weighting == "uniform":
        weights = [1.0 / len(deltas)] * len(deltas)
    elif weighting == "node-weighted":
        if node_counts is None or len(node_counts) != len(deltas):
            raise FederationError("node-weighted aggregation needs node counts")
        total = float(sum(node_counts))
        weights = [c / total for c in node_counts]
    else:
        raise FederationError(f"unknown weighting {weighting!r}")

    out = OrderedDict()
    for name, value in theta.items():
        acc = value.copy()
        for w, delta in zip(weights, deltas):
            d = delta[name]
            if d.shape != value.shape:
                raise FederationError(
                    f"delta shape mismatch for {name!r}: {d.shape} vs {value.shape}")
            acc += w * d
        out[name] = acc
    return out


def evaluate_client(client, split="valid", batch_size=256, mask_threshold=1.0):
    """Test-time metrics over one split, in original target units."""
    samples = getattr(client.dataset, split)
    if not samples:
        raise FederationError(f"client {client.client_id} has no {split} samples")
    preds, targets = [], []
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            x_arr, y_arr = batch_arrays(samples[start:start + batch_size])
            y_hat, _ = client.model.forward(Tensor(x_arr), training=False)
            preds.append(y_hat.data)
            targets.append(y_arr)
    return evaluate(np.concatenate(preds), np.concatenate(targets),
                    mask_threshold=mask_threshold)


def run_training(clients, config, round_hook=None):
    """The server loop: sample, broadcast, collect updates, aggregate,
    re-broadcast, evaluate. Returns one report dict per round."""
    config.validate()
    if not clients:
        raise FederationError("run_training needs at least one client")

    shared_names = [n for n, _ in clients[0].store.shared_items()]
    for c in clients[1:]:
        names = [n for n, _ in c.store.shared_items()]
        if names != shared_names:
            raise FederationError(
                f"client {c.client_id} shared set differs from {clients[0].client_id}")

    sampler = np.random.default_rng(config.seed)
    theta = clients[0].store.shared_arrays()
    for c in clients:
        c.store.load_shared(theta)

    shared_count = clients[0].store.comm_cost()
    reports = []
    for round_idx in range(config.rounds):
        k = max(1, math.ceil(config.fraction * len(clients)))
        chosen = sorted(sampler.choice(len(clients), size=k, replace=False).tolist())
        participants = [clients[i] for i in chosen]

        deltas, summaries, node_counts, skipped = [], [], [], []
        for client in participants:
            result = client_update(client, theta, config, round_idx)
            if result is None:
                skipped.append(client.client_id)
                continue
            delta, summary = result
            deltas.append(delta)
            summaries.append(summary)
            node_counts.append(client.node_count)

        if deltas:
            theta = aggregate(theta, deltas, config.weighting, node_counts)
        for c in clients:
            c.store.load_shared(theta)

        val = {c.client_id: evaluate_client(c, "valid", config.eval_batch_size).as_dict()
               for c in clients if c.dataset.valid}
        report = {
            "round": round_idx,
            "participants": [clients[i].client_id for i in chosen],
            "skipped": skipped,
            "clients": summaries,
            "validation": val,
            "shared_parameter_count": shared_count,
            "transmitted_parameters": 2 * shared_count * len(participants),
        }
        reports.append(report)
        if round_hook is not None:
            round_hook(report)
    return reports


# ---------------------------------------------------------------------------
# shared-store wire format: leading record count, then per record the name,
# the shape, and a little-endian float64 buffer
# ---------------------------------------------------------------------------

def serialize_store(arrays):
    chunks = [struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def deserialize_store(blob):
    offset = 0

    def read(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    (count,) = read("<I")
    out = OrderedDict()
    for _ in range(count):
        (name_len,) = read("<I")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = read("<I")
        shape = read(f"<{ndim}Q") if ndim else ()
        n_items = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n_items, offset=offset)
        offset += n_items * 8
        out[name] = arr.reshape(shape).astype(np.float64)
    return out
