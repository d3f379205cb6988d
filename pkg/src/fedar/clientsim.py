"""Simulated FL clients: local SGD plus behavior overlays.

A client runs the standard local update (shuffle once, fixed batches,
E epochs of minibatch SGD) through the active kernel backend. Behavior
policies then distort the outcome: stragglers miss the timeout with some
probability, poisoners train on label-flipped data (applied at setup)
and/or scale their submitted parameters.
"""

import math
from dataclasses import dataclass, replace

from . import backend
from .errors import ConfigError, DataError
from .feddata import ClientDataset, PoisonSpec, poison
from .numcore import Batch, ModelParams, loss
from .resource import TaskSpec

RELIABLE = "reliable"
STRAGGLER = "straggler"
POISONER = "poisoner"
KINDS = (RELIABLE, STRAGGLER, POISONER)


@dataclass(frozen=True)
class ClientBehavior:
    """How a simulated client deviates from the ideal participant."""

    kind: str = RELIABLE
    late_probability: float = 0.0
    latency_multiplier: float = 1.0
    poison: PoisonSpec = None
    deviant_scale: float = None

    def __post_init__(self):
        problems = []
        if self.kind not in KINDS:
            problems.append(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.late_probability <= 1.0:
            problems.append(
                f"late_probability must be in [0, 1], got {self.late_probability}"
            )
        if self.latency_multiplier <= 0:
            problems.append(
                f"latency_multiplier must be positive, got {self.latency_multiplier}"
            )
        if self.kind == RELIABLE and (
            self.late_probability != 0.0
            or self.poison is not None
            or self.deviant_scale is not None
        ):
            problems.append("a reliable client cannot be late or poison its updates")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True, eq=False)
class SimClient:
    """A client as the server sees it: id, (possibly poisoned) data, behavior."""

    client_id: str
    dataset: ClientDataset
    behavior: ClientBehavior

    def __len__(self) -> int:
        return len(self.dataset)


def make_client(dataset: ClientDataset, behavior: ClientBehavior,
                num_classes: int = 10) -> SimClient:
    """Bind behavior to a dataset, applying any label-flip spec up front."""
    if behavior.poison is not None:
        dataset = poison(dataset, behavior.poison, num_classes)
    return SimClient(dataset.client_id, dataset, behavior)


@dataclass(frozen=True, eq=False)
class ClientUpdateResult:
    client_id: str
    params: ModelParams
    samples_used: int
    virtual_latency: float
    local_loss: float


def client_update(client: SimClient, global_params: ModelParams,
                  spec: TaskSpec, rng) -> ClientUpdateResult:
    """Run the local training loop and cost out its virtual latency.

    The dataset is shuffled once per call; the resulting batch boundaries
    stay fixed across all E epochs. Latency is
    base_compute_cost * latency_multiplier * (E * num_batches) +
    transmission_cost, so E = 0 costs only the transmission.
    """
    n = len(client)
    if n == 0:
        raise DataError(f"client {client.client_id} has no training data")
    perm = rng.permutation(n)
    weights, bias = backend.local_sgd(
        global_params.weights,
        global_params.bias,
        client.dataset.features[perm],
        client.dataset.labels[perm],
        spec.batch_size,
        spec.local_epochs,
        spec.eta,
    )
    params = ModelParams(weights, bias)
    num_batches = math.ceil(n / spec.batch_size)
    latency = (
        spec.base_compute_cost
        * client.behavior.latency_multiplier
        * (spec.local_epochs * num_batches)
        + spec.transmission_cost
    )
    local_loss = loss(params, Batch(client.dataset.features, client.dataset.labels))
    return ClientUpdateResult(
        client_id=client.client_id,
        params=params,
        samples_used=n,
        virtual_latency=latency,
        local_loss=local_loss,
    )


def apply_behavior(result: ClientUpdateResult, behavior: ClientBehavior, rng):
    """Overlay the behavior policy on a finished update.

    Returns (possibly modified result, is_late). Lateness is a seeded
    Bernoulli draw; a deviant scale multiplies every submitted parameter.
    """
    if behavior.deviant_scale is not None and behavior.deviant_scale != 1.0:
        scaled = ModelParams(
            result.params.weights * behavior.deviant_scale,
            result.params.bias * behavior.deviant_scale,
        )
        result = replace(result, params=scaled)
    is_late = bool(behavior.late_probability > 0
                   and rng.random() < behavior.late_probability)
    return result, is_late
