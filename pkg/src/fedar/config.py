"""Experiment config: JSON document -> validated ExperimentConfig.

The schema is strict: unknown keys are errors, every message carries the
dotted path of the offending field, and all problems are reported in one
pass rather than stopping at the first. The full schema with defaults is
documented in docs/config.md.
"""

import json
import math
from dataclasses import dataclass

from .clientsim import KINDS, RELIABLE
from .errors import ConfigError
from .resource import ResourceProfile, TaskSpec
from .server import ServerSettings
from .trust import BY_PARTICIPATION, BY_ROUND_INDEX, TrustConstants


@dataclass(frozen=True)
class DataSettings:
    source: str
    idx_dir: str
    num_features: int
    num_classes: int
    pool_size: int
    test_cap: int
    seed: int


@dataclass(frozen=True)
class ResourceSettings:
    battery_drain_pct: float
    noise: bool


@dataclass(frozen=True)
class ClientSpec:
    id: str
    labels: frozenset
    samples: int
    profile: ResourceProfile
    behavior_kind: str
    late_probability: float
    latency_multiplier: float
    flip_fraction: float
    poison_seed: int
    deviant_scale: float
    activation: str


@dataclass(frozen=True)
class SweepSettings:
    straggler_candidates: tuple
    late_probability: float
    latency_multiplier: float


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    data: DataSettings
    task: TaskSpec
    trust: TrustConstants
    failure_denominator: str
    resources: ResourceSettings
    server: ServerSettings
    clients: tuple
    sweep: SweepSettings


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


class _Check:
    """One field: a default plus a predicate with a human description."""

    def __init__(self, default, pred, desc):
        self.default = default
        self.pred = pred
        self.desc = desc


def _integer(default, minimum=None):
    return _Check(
        default,
        lambda v: _is_int(v) and (minimum is None or v >= minimum),
        "an integer" + (f" >= {minimum}" if minimum is not None else ""),
    )


def _number(default, minimum=None, maximum=None, exclusive_min=False, nullable=False):
    def pred(v):
        if v is None:
            return nullable
        if not _is_num(v):
            return False
        if minimum is not None and (v <= minimum if exclusive_min else v < minimum):
            return False
        return maximum is None or v <= maximum

    bounds = []
    if minimum is not None:
        bounds.append(f"{'>' if exclusive_min else '>='} {minimum}")
    if maximum is not None:
        bounds.append(f"<= {maximum}")
    desc = "a number" + (" " + " and ".join(bounds) if bounds else "")
    if nullable:
        desc += " or null"
    return _Check(default, pred, desc)


def _boolean(default):
    return _Check(default, lambda v: isinstance(v, bool), "true or false")


def _choice(default, options):
    return _Check(default, lambda v: v in options, f"one of {sorted(options)}")


def _string(default, nullable=False):
    return _Check(
        default,
        lambda v: isinstance(v, str) or (nullable and v is None),
        "a string" + (" or null" if nullable else ""),
    )


def _gamma_check():
    def pred(v):
        if v == "inf":
            return True
        return (_is_num(v) or v == math.inf) and v > 0

    return _Check(1.0, pred, "a positive number or \"inf\"")


_RESOURCE_FIELDS = {
    "memory_mb": _number(1024.0, minimum=0),
    "bandwidth_mbps": _number(50.0, minimum=0),
    "battery_pct": _number(100.0, minimum=0, maximum=100),
}

_REQUIREMENT_FIELDS = {
    "memory_mb": _number(256.0, minimum=0),
    "bandwidth_mbps": _number(4.0, minimum=0),
    "battery_pct": _number(10.0, minimum=0, maximum=100),
}

_SCHEMA = {
    "seed": _integer(0, minimum=0),
    "data": {
        "source": _choice("auto", ("auto", "synthetic", "idx")),
        "idx_dir": _string(None, nullable=True),
        "num_features": _integer(784, minimum=1),
        "num_classes": _integer(10, minimum=2),
        "pool_size": _integer(12000, minimum=1),
        "test_cap": _integer(2000, minimum=0),
        "seed": _Check(None, lambda v: v is None or (_is_int(v) and v >= 0),
                       "an integer >= 0 or null"),
    },
    "task": {
        "batch_size": _integer(20, minimum=1),
        "local_epochs": _integer(5, minimum=0),
        "eta": _number(5e-05, minimum=0),
        "client_fraction": _number(1.0, minimum=0, maximum=1, exclusive_min=True),
        "subsample_ratio": _number(1.0, minimum=0, maximum=1, exclusive_min=True),
        "min_trust": _number(0.0),
        "timeout": _number(25.0, minimum=0, exclusive_min=True),
        "timeout_schedule": _Check(
            None,
            lambda v: v is None
            or (isinstance(v, list) and all(_is_num(t) and t > 0 for t in v)),
            "a list of positive numbers or null",
        ),
        "gamma": _gamma_check(),
        "base_compute_cost": _number(0.01, minimum=0),
        "transmission_cost": _number(0.5, minimum=0),
        "max_rounds": _integer(30, minimum=0),
        "target_accuracy": _number(None, minimum=0, maximum=1, exclusive_min=True,
                                   nullable=True),
        "requirements": _REQUIREMENT_FIELDS,
    },
    "trust": {
        "initial": _integer(50),
        "reward": _integer(8),
        "interested": _integer(1),
        "penalty": _integer(-2),
        "blame": _integer(-8),
        "ban": _integer(-16),
        "failure_rate_denominator": _choice(
            BY_PARTICIPATION, (BY_PARTICIPATION, BY_ROUND_INDEX)
        ),
    },
    "resources": {
        "battery_drain_pct": _number(0.5, minimum=0),
        "noise": _boolean(True),
    },
    "server": {
        "mode": _choice("sync", ("sync", "async")),
        "mixing": _number(1.0, minimum=0, maximum=1, exclusive_min=True),
        "merge_late": _boolean(False),
        "gamma_mode": _choice("adaptive", ("adaptive", "fixed", "off")),
        "gamma_factor": _number(3.0, minimum=0, exclusive_min=True),
        "similarity_threshold": _number(0.99, minimum=0, exclusive_min=True,
                                        nullable=True),
        "parallel_workers": _integer(1, minimum=1),
    },
    "sweep": {
        "straggler_candidates": _Check(
            (),
            lambda v: isinstance(v, (list, tuple)) and all(isinstance(c, str) for c in v),
            "a list of client ids",
        ),
        "late_probability": _number(0.8, minimum=0, maximum=1),
        "latency_multiplier": _number(1.5, minimum=0, exclusive_min=True),
    },
}

_CLIENT_FIELDS = {
    "id": _Check(None, lambda v: isinstance(v, str) and v != "", "a nonempty string"),
    "labels": _Check(
        None,
        lambda v: isinstance(v, list) and len(v) > 0 and all(_is_int(x) for x in v),
        "a nonempty list of integers",
    ),
    "samples": _integer(None, minimum=1),
    "resources": _RESOURCE_FIELDS,
    "behavior": {
        "kind": _choice(RELIABLE, KINDS),
        "late_probability": _number(0.0, minimum=0, maximum=1),
        "latency_multiplier": _number(1.0, minimum=0, exclusive_min=True),
        "flip_fraction": _number(0.0, minimum=0, maximum=1),
        "poison_seed": _Check(None, lambda v: v is None or (_is_int(v) and v >= 0),
                              "an integer >= 0 or null"),
        "deviant_scale": _number(None, nullable=True),
    },
    "activation": _string("Softmax"),
}

_CLIENT_REQUIRED = ("id", "labels", "samples")


def _walk(path, doc, fields, errors, required=()):
    """Merge one object over its schema defaults, collecting error strings."""
    if not isinstance(doc, dict):
        errors.append(f"{path or 'config'}: expected an object, got {type(doc).__name__}")
        doc = {}
    out = {}
    for key in doc:
        if key not in fields:
            errors.append(f"{path or 'config'}: unknown key {key!r}")
    for key, check in fields.items():
        dotted = f"{path}.{key}" if path else key
        if isinstance(check, dict):
            out[key] = _walk(dotted, doc.get(key, {}), check, errors)
            continue
        if key not in doc:
            if key in required:
                errors.append(f"{dotted}: required key is missing")
            out[key] = check.default
            continue
        value = doc[key]
        if check.pred(value):
            out[key] = value
        else:
            errors.append(f"{dotted}: expected {check.desc}, got {value!r}")
            out[key] = check.default
    return out


def validate_config(doc: dict) -> ExperimentConfig:
    """Check a parsed config document and assemble the typed configuration.

    Raises ConfigError carrying one message per problem found.
    """
    errors = []
    if not isinstance(doc, dict):
        raise ConfigError(f"config: expected a JSON object, got {type(doc).__name__}")
    top = {k: v for k, v in doc.items() if k != "clients"}
    merged = _walk("", top, _SCHEMA, errors)

    raw_clients = doc.get("clients")
    clients = []
    if not isinstance(raw_clients, list) or not raw_clients:
        errors.append("clients: expected a nonempty list of client objects")
        raw_clients = []
    seen_ids = set()
    num_classes = merged["data"]["num_classes"]
    for i, raw in enumerate(raw_clients):
        c = _walk(f"clients[{i}]", raw, _CLIENT_FIELDS, errors, required=_CLIENT_REQUIRED)
        if c["id"] in seen_ids:
            errors.append(f"clients[{i}].id: duplicate client id {c['id']!r}")
        seen_ids.add(c["id"])
        if c["labels"] and any(not 0 <= x < num_classes for x in c["labels"]):
            errors.append(
                f"clients[{i}].labels: labels must lie in [0, {num_classes})"
            )
        behavior = c["behavior"]
        if behavior["kind"] == RELIABLE and (
            behavior["late_probability"] != 0.0
            or behavior["flip_fraction"] != 0.0
            or behavior["deviant_scale"] is not None
        ):
            errors.append(
                f"clients[{i}].behavior: a reliable client cannot be late or poison"
            )
        clients.append(c)

    if errors:
        raise ConfigError(errors)

    gamma = merged["task"]["gamma"]
    if gamma == "inf":
        gamma = math.inf
    schedule = merged["task"]["timeout_schedule"]
    try:
        task = TaskSpec(
            requirement=ResourceProfile(**merged["task"]["requirements"]),
            min_trust=merged["task"]["min_trust"],
            timeout_t=merged["task"]["timeout"],
            gamma=gamma,
            batch_size=merged["task"]["batch_size"],
            local_epochs=merged["task"]["local_epochs"],
            eta=merged["task"]["eta"],
            client_fraction=merged["task"]["client_fraction"],
            max_rounds=merged["task"]["max_rounds"],
            target_accuracy=merged["task"]["target_accuracy"],
            subsample_ratio=merged["task"]["subsample_ratio"],
            base_compute_cost=merged["task"]["base_compute_cost"],
            transmission_cost=merged["task"]["transmission_cost"],
            timeout_schedule=tuple(schedule) if schedule else None,
        )
        trust_kwargs = dict(merged["trust"])
        denominator = trust_kwargs.pop("failure_rate_denominator")
        trust = TrustConstants(**trust_kwargs)
        server = ServerSettings(**merged["server"])
    except ConfigError as exc:
        raise ConfigError(exc.details) from None

    client_specs = tuple(
        ClientSpec(
            id=c["id"],
            labels=frozenset(c["labels"]),
            samples=c["samples"],
            profile=ResourceProfile(**c["resources"]),
            behavior_kind=c["behavior"]["kind"],
            late_probability=c["behavior"]["late_probability"],
            latency_multiplier=c["behavior"]["latency_multiplier"],
            flip_fraction=c["behavior"]["flip_fraction"],
            poison_seed=c["behavior"]["poison_seed"],
            deviant_scale=c["behavior"]["deviant_scale"],
            activation=c["activation"],
        )
        for c in clients
    )
    return ExperimentConfig(
        seed=merged["seed"],
        data=DataSettings(**merged["data"]),
        task=task,
        trust=trust,
        failure_denominator=denominator,
        resources=ResourceSettings(**merged["resources"]),
        server=server,
        clients=client_specs,
        sweep=SweepSettings(
            straggler_candidates=tuple(merged["sweep"]["straggler_candidates"]),
            late_probability=merged["sweep"]["late_probability"],
            latency_multiplier=merged["sweep"]["latency_multiplier"],
        ),
    )


def load_config(path) -> dict:
    """Parse a JSON config file, turning syntax errors into ConfigError."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
