"""Resource profiles, the task description, and the resource gate."""

from dataclasses import dataclass

from .errors import ConfigError
from . import streams


@dataclass(frozen=True)
class ResourceProfile:
    """What a client has (or a task demands): memory, bandwidth, battery."""

    memory_mb: float
    bandwidth_mbps: float
    battery_pct: float

    def __post_init__(self):
        if min(self.memory_mb, self.bandwidth_mbps, self.battery_pct) < 0:
            raise ConfigError(f"resource components must be nonnegative: {self}")
        if self.battery_pct > 100:
            raise ConfigError(f"battery_pct must be <= 100, got {self.battery_pct}")


@dataclass(frozen=True)
class TaskSpec:
    """Everything the task publisher broadcasts for one experiment."""

    requirement: ResourceProfile
    min_trust: float
    timeout_t: float
    gamma: float
    batch_size: int
    local_epochs: int
    eta: float
    client_fraction: float
    max_rounds: int
    target_accuracy: float = None
    subsample_ratio: float = 1.0
    base_compute_cost: float = 0.01
    transmission_cost: float = 0.5
    timeout_schedule: tuple = None

    def __post_init__(self):
        problems = []
        if self.timeout_t <= 0:
            problems.append(f"timeout_t must be positive, got {self.timeout_t}")
        if not self.gamma > 0:
            problems.append(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.client_fraction <= 1:
            problems.append(f"client_fraction must be in (0, 1], got {self.client_fraction}")
        if not 0 < self.subsample_ratio <= 1:
            problems.append(f"subsample_ratio must be in (0, 1], got {self.subsample_ratio}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.local_epochs < 0:
            problems.append(f"local_epochs must be >= 0, got {self.local_epochs}")
        if self.eta < 0:
            problems.append(f"eta must be nonnegative, got {self.eta}")
        if self.max_rounds < 0:
            problems.append(f"max_rounds must be >= 0, got {self.max_rounds}")
        if self.target_accuracy is not None and not 0 < self.target_accuracy <= 1:
            problems.append(
                f"target_accuracy must be in (0, 1], got {self.target_accuracy}"
            )
        if self.base_compute_cost < 0 or self.transmission_cost < 0:
            problems.append("compute and transmission costs must be nonnegative")
        if self.timeout_schedule is not None and any(t <= 0 for t in self.timeout_schedule):
            problems.append("timeout_schedule entries must be positive")
        if problems:
            raise ConfigError(problems)

    def timeout_for(self, round_index: int) -> float:
        """Round timeout: the schedule entry if one exists, else the default."""
        if self.timeout_schedule and round_index <= len(self.timeout_schedule):
            return self.timeout_schedule[round_index - 1]
        return self.timeout_t


def check_resource(avail: ResourceProfile, req: ResourceProfile) -> bool:
    """True iff availability dominates the requirement componentwise."""
    return (
        avail.memory_mb >= req.memory_mb
        and avail.bandwidth_mbps >= req.bandwidth_mbps
        and avail.battery_pct >= req.battery_pct
    )


class ResourceTracker:
    """Simulated drift of client resources over rounds.

    Battery drains by a fixed percentage on every round a client actually
    trains; memory and bandwidth wobble by a seeded multiplicative factor
    in [0.8, 1.0] that depends only on (seed, round, client), never on
    call order.
    """

    def __init__(self, profiles: dict, *, battery_drain_pct: float = 0.5,
                 noise: bool = True, master_seed: int = 0):
        if battery_drain_pct < 0:
            raise ConfigError(f"battery_drain_pct must be nonnegative, got {battery_drain_pct}")
        self._profiles = dict(profiles)
        self._index = {cid: i for i, cid in enumerate(self._profiles)}
        self._participations = {cid: 0 for cid in self._profiles}
        self.battery_drain_pct = battery_drain_pct
        self.noise = noise
        self.master_seed = master_seed

    def record_participation(self, client_id: str):
        self._participations[client_id] += 1

    def participations(self, client_id: str) -> int:
        return self._participations[client_id]

    def availability(self, client_id: str, round_index: int) -> ResourceProfile:
        """The client's currently free resources at the given round."""
        static = self._profiles[client_id]
        if self.noise:
            rng = streams.stream(
                self.master_seed, streams.RESOURCE, round_index, self._index[client_id]
            )
            mem_factor, bw_factor = 0.8 + 0.2 * rng.random(2)
        else:
            mem_factor = bw_factor = 1.0
        battery = max(
            0.0,
            static.battery_pct - self.battery_drain_pct * self._participations[client_id],
        )
        return ResourceProfile(
            memory_mb=static.memory_mb * mem_factor,
            bandwidth_mbps=static.bandwidth_mbps * bw_factor,
            battery_pct=battery,
        )
