"""Round orchestrator: gate, select, dispatch, collect, aggregate, score.

One Simulation owns all mutable state (global model, trust ledger,
resource tracker, similarity histories, virtual clock) and advances it
one round at a time. Client training inside a round may run on a thread
pool; every random draw comes from a stream keyed by (seed, domain,
round, client), so parallel and serial execution produce bit-identical
results and reruns with the same seed reproduce every byte.
"""

import logging
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import streams
from .clientsim import ClientBehavior, apply_behavior, client_update, make_client
from .errors import ConfigError, DataError
from .feddata import PoisonSpec, load_idx, partition, synth_digits
from .numcore import Batch, ModelParams, accuracy, loss, param_distance, zero_params
from .resource import ResourceTracker, check_resource
from .selection import eligible, select_participants
from .trust import TrustConstants, TrustLedger

logger = logging.getLogger(__name__)

SYNC = "sync"
ASYNC = "async"

ON_TIME = "on_time"
LATE = "late"
REJECTED_DEVIATION = "rejected_deviation"
REJECTED_SIMILARITY = "rejected_similarity"

GAMMA_ADAPTIVE = "adaptive"
GAMMA_FIXED = "fixed"
GAMMA_OFF = "off"

MNIST_DIR_ENV = "FEDAR_MNIST_DIR"


@dataclass(frozen=True)
class ServerSettings:
    """Aggregation mode and gate policy for one experiment."""

    mode: str = SYNC
    mixing: float = 1.0
    merge_late: bool = False
    gamma_mode: str = GAMMA_ADAPTIVE
    gamma_factor: float = 3.0
    similarity_threshold: float = 0.99
    parallel_workers: int = 1

    def __post_init__(self):
        problems = []
        if self.mode not in (SYNC, ASYNC):
            problems.append(f"mode must be '{SYNC}' or '{ASYNC}', got {self.mode!r}")
        if not 0 < self.mixing <= 1:
            problems.append(f"mixing must be in (0, 1], got {self.mixing}")
        if self.gamma_mode not in (GAMMA_ADAPTIVE, GAMMA_FIXED, GAMMA_OFF):
            problems.append(f"unknown gamma_mode {self.gamma_mode!r}")
        if self.gamma_factor <= 0:
            problems.append(f"gamma_factor must be positive, got {self.gamma_factor}")
        if self.parallel_workers < 1:
            problems.append(f"parallel_workers must be >= 1, got {self.parallel_workers}")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True, eq=False)
class RoundRecord:
    """Everything observable about one finished round."""

    round_index: int
    mode: str
    participants: tuple
    statuses: dict  # participant -> ON_TIME | LATE | REJECTED_*
    interested: tuple
    arrival_order: tuple
    gamma_used: float
    test_loss: float
    test_accuracy: float
    trust: dict
    virtual_time: float

    def status_count(self, status: str) -> int:
        return sum(1 for s in self.statuses.values() if s == status)


class SimilarityState:
    """Cumulative update-direction history per client.

    A client whose cumulative direction stays almost parallel to another
    client's (cosine above the threshold) is flagged as a coordinated or
    replayed update source.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self._history = {}

    def update(self, client_id: str, delta: np.ndarray):
        if delta.shape != (self.dim,):
            raise DataError(f"history delta must have shape ({self.dim},)")
        if client_id in self._history:
            self._history[client_id] = self._history[client_id] + delta
        else:
            self._history[client_id] = delta.copy()

    def max_cosine(self, client_id: str) -> float:
        own = self._history.get(client_id)
        if own is None:
            return 0.0
        own_norm = float(np.linalg.norm(own))
        if own_norm == 0.0:
            return 0.0
        best = 0.0
        for other_id, other in self._history.items():
            if other_id == client_id:
                continue
            other_norm = float(np.linalg.norm(other))
            if other_norm == 0.0:
                continue
            best = max(best, float(own @ other) / (own_norm * other_norm))
        return best


def evaluate_global(params: ModelParams, features: np.ndarray, labels: np.ndarray):
    """Test-set (loss, accuracy) of the current global model."""
    if len(labels) == 0:
        raise DataError("cannot evaluate on an empty test set")
    batch = Batch(features, labels)
    return loss(params, batch), accuracy(params, batch)


def _build_pool(cfg):
    """The sample pool: IDX files when pointed at them, else synthetic."""
    source = cfg.data.source
    idx_dir = cfg.data.idx_dir or os.environ.get(MNIST_DIR_ENV)
    if source == "auto":
        source = "idx" if idx_dir else "synthetic"
    if source == "idx":
        if not idx_dir:
            raise ConfigError(
                f"data.source is 'idx' but neither data.idx_dir nor ${MNIST_DIR_ENV} is set"
            )
        return load_idx(
            os.path.join(idx_dir, "train-images-idx3-ubyte"),
            os.path.join(idx_dir, "train-labels-idx1-ubyte"),
        )
    data_seed = cfg.data.seed
    if data_seed is None:
        data_seed = np.random.SeedSequence([cfg.seed, streams.DATA])
    return synth_digits(
        cfg.data.pool_size, cfg.data.num_classes, data_seed, cfg.data.num_features
    )


class Simulation:
    """One experiment: fixed federation, evolving state, a round loop."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.spec = cfg.task
        self.settings = cfg.server
        pool_features, pool_labels = _build_pool(cfg)
        table = [(c.id, c.labels, c.samples) for c in cfg.clients]
        self.federation = partition(
            table,
            pool_features,
            pool_labels,
            test_cap=cfg.data.test_cap,
            seed=np.random.SeedSequence([cfg.seed, streams.PARTITION]),
        )
        self.clients = []
        self._client_index = {}
        for i, cspec in enumerate(cfg.clients):
            behavior = self._build_behavior(cspec, i)
            client = make_client(
                self.federation.client(cspec.id), behavior, cfg.data.num_classes
            )
            self.clients.append(client)
            self._client_index[cspec.id] = i
        self._client_map = {c.client_id: c for c in self.clients}

        self.ledger = TrustLedger(cfg.trust, cfg.failure_denominator)
        for cspec in cfg.clients:
            self.ledger.register(cspec.id)
        self.tracker = ResourceTracker(
            {c.id: c.profile for c in cfg.clients},
            battery_drain_pct=cfg.resources.battery_drain_pct,
            noise=cfg.resources.noise,
            master_seed=cfg.seed,
        )
        self.params = zero_params(cfg.data.num_features, cfg.data.num_classes)
        self.similarity = SimilarityState(
            cfg.data.num_features * cfg.data.num_classes + cfg.data.num_classes
        )
        self.clock = 0.0
        self.records = []
        self._gamma = None  # adaptive estimate, set after the first usable round
        self._ever_below_trust = set()

    def _build_behavior(self, cspec, index: int) -> ClientBehavior:
        poison_spec = None
        if cspec.flip_fraction > 0:
            seed = cspec.poison_seed
            if seed is None:
                seed = int(
                    streams.stream(self.cfg.seed, streams.POISON, index).integers(2**62)
                )
            poison_spec = PoisonSpec(cspec.flip_fraction, seed)
        return ClientBehavior(
            kind=cspec.behavior_kind,
            late_probability=cspec.late_probability,
            latency_multiplier=cspec.latency_multiplier,
            poison=poison_spec,
            deviant_scale=cspec.deviant_scale,
        )

    # round machinery

    def _gamma_for_gating(self, on_time_distances):
        """The deviation threshold in force this round, or None when off."""
        mode = self.settings.gamma_mode
        if mode == GAMMA_OFF:
            return None
        if mode == GAMMA_FIXED:
            return self.spec.gamma
        if self._gamma is None and on_time_distances:
            # First round with any on-time updates calibrates the threshold.
            self._gamma = self.settings.gamma_factor * statistics.median(on_time_distances)
        return self._gamma if self._gamma is not None else self.spec.gamma

    def _refresh_gamma(self, accepted_distances):
        if self.settings.gamma_mode == GAMMA_ADAPTIVE and accepted_distances:
            self._gamma = self.settings.gamma_factor * statistics.median(accepted_distances)

    def _gate(self, client_id: str, result, reference: ModelParams, gamma, distance):
        """Apply deviation then similarity gate; return a status or None if accepted."""
        if gamma is not None and distance > gamma:
            return REJECTED_DEVIATION
        if self.settings.similarity_threshold is not None:
            self.similarity.update(
                client_id, result.params.flat() - reference.flat()
            )
            if self.similarity.max_cosine(client_id) > self.settings.similarity_threshold:
                return REJECTED_SIMILARITY
        return None

    def _dispatch(self, round_index: int, participants):
        def work(client_id):
            client = self._client_map[client_id]
            idx = self._client_index[client_id]
            result = client_update(
                client,
                self.params,
                self.spec,
                streams.stream(self.cfg.seed, streams.CLIENT, round_index, idx),
            )
            result, is_late = apply_behavior(
                result,
                client.behavior,
                streams.stream(self.cfg.seed, streams.LATE, round_index, idx),
            )
            return client_id, (result, is_late)

        if self.settings.parallel_workers == 1:
            return dict(work(cid) for cid in participants)
        with ThreadPoolExecutor(max_workers=self.settings.parallel_workers) as pool:
            return dict(pool.map(work, participants))

    def _aggregate_sync(self, entries, statuses):
        """Gate on-time arrivals, then weight the survivors by data share."""
        base = self.params
        on_time = [e for e in entries if e[3]]
        distances = {
            cid: param_distance(base, result.params) for _, cid, result, _ in on_time
        }
        gamma = self._gamma_for_gating(sorted(distances.values()))
        accepted = []
        for _, cid, result, _ in on_time:
            status = self._gate(cid, result, base, gamma, distances[cid])
            if status is None:
                statuses[cid] = ON_TIME
                accepted.append(result)
            else:
                statuses[cid] = status
        new_params = base
        if accepted:
            n_acc = sum(r.samples_used for r in accepted)
            weights = np.zeros_like(base.weights)
            bias = np.zeros_like(base.bias)
            for r in accepted:
                share = r.samples_used / n_acc
                weights += share * r.params.weights
                bias += share * r.params.bias
            new_params = ModelParams(weights, bias)
        self._refresh_gamma([distances[r.client_id] for r in accepted])
        return new_params, gamma, []

    def _aggregate_async(self, entries, statuses):
        """Merge each surviving arrival into the global model immediately."""
        current = self.params
        n_total = self.federation.total_size
        merged_late = []
        accepted_distances = []
        calibration = sorted(
            param_distance(current, result.params)
            for _, cid, result, on_time in entries
            if on_time
        )
        gamma = self._gamma_for_gating(calibration)
        for eff, cid, result, on_time in entries:
            if not on_time:
                statuses[cid] = LATE
                if not self.settings.merge_late:
                    continue
            distance = param_distance(current, result.params)
            status = self._gate(cid, result, current, gamma, distance)
            if status is not None:
                if on_time:
                    statuses[cid] = status
                continue
            if on_time:
                statuses[cid] = ON_TIME
                accepted_distances.append(distance)
            else:
                merged_late.append(eff)
            alpha = self.settings.mixing * result.samples_used / n_total
            current = ModelParams(
                (1.0 - alpha) * current.weights + alpha * result.params.weights,
                (1.0 - alpha) * current.bias + alpha * result.params.bias,
            )
        self._refresh_gamma(accepted_distances)
        return current, gamma, merged_late

    def run_round(self, round_index: int) -> RoundRecord:
        spec = self.spec
        timeout = spec.timeout_for(round_index)
        snap = self.ledger.snapshot()
        ra = [
            c.client_id
            for c in self.clients
            if len(c) > 0
            and check_resource(
                self.tracker.availability(c.client_id, round_index), spec.requirement
            )
        ]
        s = eligible(snap, ra, spec.min_trust)
        for cid in ra:
            if snap[cid] < spec.min_trust:
                self._ever_below_trust.add(cid)
        for cid in s:
            if cid in self._ever_below_trust:
                logger.info(
                    "round %d: client %s regained eligibility after falling below "
                    "the trust minimum", round_index, cid,
                )
                self._ever_below_trust.discard(cid)

        if not s:
            logger.warning("round %d: no eligible clients, skipping", round_index)
            self.clock += timeout
            test_loss, test_accuracy = evaluate_global(
                self.params, self.federation.test_features, self.federation.test_labels
            )
            record = RoundRecord(
                round_index, self.settings.mode, (), {}, (), (), None,
                test_loss, test_accuracy, snap, self.clock,
            )
            self.records.append(record)
            return record

        candidates, participants = select_participants(
            s,
            spec.client_fraction,
            spec.subsample_ratio,
            streams.stream(self.cfg.seed, streams.SELECT, round_index),
        )
        chosen = set(participants)
        interested = tuple(cid for cid in s if cid not in chosen)
        self.ledger.credit_interested(interested)
        self.ledger.begin_round(round_index, participants)

        results = self._dispatch(round_index, participants)
        for cid in participants:
            self.tracker.record_participation(cid)

        entries = []
        for cid in participants:
            result, behavior_late = results[cid]
            effective = result.virtual_latency + (timeout if behavior_late else 0.0)
            on_time = not behavior_late and result.virtual_latency <= timeout
            entries.append((effective, cid, result, on_time))
        entries.sort(key=lambda e: (e[0], e[1]))
        arrival_order = tuple(cid for _, cid, _, _ in entries)

        statuses = {cid: LATE for cid in participants}
        if self.settings.mode == SYNC:
            new_params, gamma, merged_late = self._aggregate_sync(entries, statuses)
        else:
            new_params, gamma, merged_late = self._aggregate_async(entries, statuses)
        if new_params is self.params:
            logger.info("round %d: no accepted updates, global model unchanged", round_index)
        self.params = new_params

        for cid in participants:
            status = statuses[cid]
            if status == ON_TIME:
                self.ledger.update_trust_score(round_index, cid, True, False)
            elif status in (REJECTED_DEVIATION, REJECTED_SIMILARITY):
                self.ledger.update_trust_score(round_index, cid, True, True)
            else:
                self.ledger.update_trust_score(round_index, cid, False, False)

        self.clock += max([timeout, *merged_late])
        test_loss, test_accuracy = evaluate_global(
            self.params, self.federation.test_features, self.federation.test_labels
        )
        record = RoundRecord(
            round_index=round_index,
            mode=self.settings.mode,
            participants=tuple(participants),
            statuses=statuses,
            interested=interested,
            arrival_order=arrival_order,
            gamma_used=gamma,
            test_loss=test_loss,
            test_accuracy=test_accuracy,
            trust=self.ledger.snapshot(),
            virtual_time=self.clock,
        )
        self.records.append(record)
        return record

    def run(self):
        """Loop rounds until max_rounds or the accuracy target is met."""
        for round_index in range(1, self.spec.max_rounds + 1):
            record = self.run_round(round_index)
            if (
                self.spec.target_accuracy is not None
                and record.test_accuracy >= self.spec.target_accuracy
            ):
                logger.info(
                    "round %d: reached target accuracy %.4f",
                    round_index, record.test_accuracy,
                )
                break
        return list(self.records)


def run_experiment(cfg):
    """Run a full experiment from a validated config; one record per round."""
    return Simulation(cfg).run()
