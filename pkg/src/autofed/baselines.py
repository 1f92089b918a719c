"""Strategy wiring: local training, FedAvg, FedPer, the full prompt-sharing
method, and its two ablations, all over the same backbone and engine."""

from dataclasses import dataclass

import numpy as np

from .data import window_and_split
from .federation import ClientState, FederationError, partition
from .model import ClientModel

STRATEGIES = ("local", "fedavg", "fedper", "autofed")


class StrategyError(ValueError):
    pass


@dataclass
class StrategySpec:
    name: str
    without_ae: bool = False
    without_fedbn: bool = False

    def validate(self):
        if self.name not in STRATEGIES:
            raise StrategyError(f"unknown strategy {self.name!r}; pick one of {STRATEGIES}")
        if (self.without_ae or self.without_fedbn) and self.name != "autofed":
            raise StrategyError("ablation flags are only valid with the autofed strategy")

    @property
    def label(self):
        suffix = ""
        if self.without_ae:
            suffix += "-no-ae"
        if self.without_fedbn:
            suffix += "-no-fedbn"
        return self.name + suffix


def shared_prefixes(spec):
    """Name prefixes classified as shared for each strategy."""
    if spec.name == "local":
        return ()
    if spec.name == "fedavg":
        return ("pp.",)
    if spec.name == "fedper":
        # share the history-encoder cell; embeddings, decoder, head stay local
        return ("pp.encoder.cell.",)
    prefixes = ["fr.adapter.lin"]
    if not spec.without_ae:
        prefixes.append("fr.ae.")
    if spec.without_fedbn:
        prefixes.append("fr.adapter.bn")
    return tuple(prefixes)


def build_clients(spec, series_list, *, history, horizon, hidden, seed,
                  learning_rate=1e-3):
    """Window each client's series, build its model with the strategy's
    wiring, and partition parameters into shared/personal groups."""
    spec.validate()
    if not series_list:
        raise StrategyError("no client series provided")
    if spec.name == "fedavg":
        counts = {s.node_count for s in series_list}
        if len(counts) > 1:
            raise StrategyError(
                f"fedavg shares every parameter including the node embedding; "
                f"clients must have equal node counts, got {sorted(counts)}")

    with_prompt = spec.name == "autofed"
    with_ae = with_prompt and not spec.without_ae
    seeds = np.random.SeedSequence(seed).spawn(len(series_list))
    prefixes = shared_prefixes(spec)

    clients = []
    for series, child_seed in zip(series_list, seeds):
        dataset = window_and_split(series, history, horizon)
        model = ClientModel(
            n=series.node_count,
            feat_width=series.values.shape[2],
            hidden=hidden,
            horizon=horizon,
            seed=child_seed,
            with_prompt=with_prompt,
            with_ae=with_ae,
        )
        store = partition(model, prefixes)
        clients.append(ClientState(series.client_id, model, store, dataset,
                                   seed=child_seed.spawn(1)[0],
                                   learning_rate=learning_rate))
    if prefixes and not clients[0].store.shared_items():
        raise FederationError("strategy expected shared parameters but found none")
    return clients
