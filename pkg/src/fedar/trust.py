"""Per-client trust ledger.

Scores start at 50 and move by fixed deltas: +8 for an on-time accepted
model, +1 for eligible-but-unselected clients, and for failures a banded
penalty driven by the client's failure rate (-2 below 20%, -8 from 20%
to under 50%, -16 at 50% or above). An on-time model rejected for
deviating too far is treated as the worst case and draws the -16 delta
directly. Scores are unbounded in both directions; the selection stage,
not the ledger, enforces any minimum-trust cut.
"""

from dataclasses import dataclass

from .errors import ConfigError, TrustError

SUCCESS = 0
FAILURE = 1

# failure_rate denominator choices
BY_PARTICIPATION = "participation"
BY_ROUND_INDEX = "round_index"


@dataclass(frozen=True)
class TrustConstants:
    initial: int = 50
    reward: int = 8
    interested: int = 1
    penalty: int = -2
    blame: int = -8
    ban: int = -16

    def __post_init__(self):
        problems = []
        if self.reward <= 0:
            problems.append(f"reward must be positive, got {self.reward}")
        for name in ("penalty", "blame", "ban"):
            if getattr(self, name) >= 0:
                problems.append(f"{name} must be negative, got {getattr(self, name)}")
        if self.blame >= self.penalty:
            problems.append(f"blame ({self.blame}) must be below penalty ({self.penalty})")
        if self.ban >= self.blame:
            problems.append(f"ban ({self.ban}) must be below blame ({self.blame})")
        if problems:
            raise ConfigError(problems)


class TrustLedger:
    """Trust scores plus per-round outcome history for every client.

    The orchestrator declares each round's participants with
    :meth:`begin_round`; only those clients may receive an outcome for
    that round, and each exactly once.
    """

    def __init__(self, constants: TrustConstants = TrustConstants(),
                 failure_denominator: str = BY_PARTICIPATION):
        if failure_denominator not in (BY_PARTICIPATION, BY_ROUND_INDEX):
            raise ConfigError(
                f"failure_denominator must be '{BY_PARTICIPATION}' or "
                f"'{BY_ROUND_INDEX}', got {failure_denominator!r}"
            )
        self.constants = constants
        self.failure_denominator = failure_denominator
        self._scores = {}
        self._history = {}  # client_id -> list of (round_index, outcome)
        self._participants = {}  # round_index -> set of client_ids
        self._trust_lists = {}  # round_index -> list of (client_id, score)

    def register(self, client_id: str):
        """Add a client at the initial score with an empty history."""
        if client_id in self._scores:
            raise TrustError(f"client {client_id!r} is already registered")
        self._scores[client_id] = self.constants.initial
        self._history[client_id] = []

    def _require(self, client_id: str):
        if client_id not in self._scores:
            raise TrustError(f"client {client_id!r} is not registered")

    def score(self, client_id: str) -> int:
        self._require(client_id)
        return self._scores[client_id]

    def history(self, client_id: str):
        self._require(client_id)
        return tuple(self._history[client_id])

    def participation_count(self, client_id: str) -> int:
        self._require(client_id)
        return len(self._history[client_id])

    def begin_round(self, round_index: int, participants):
        """Declare the participant set for a round before recording outcomes."""
        if round_index in self._participants:
            raise TrustError(f"round {round_index} already has participants declared")
        participants = list(participants)
        for client_id in participants:
            self._require(client_id)
        self._participants[round_index] = set(participants)
        self._trust_lists[round_index] = []

    def failure_rate(self, client_id: str, round_index: int = None) -> float:
        """Fraction of recorded outcomes that were failures.

        With the round-index denominator, rounds the client never joined
        also count toward the denominator (the literal reading); pass the
        current round for that mode.
        """
        self._require(client_id)
        history = self._history[client_id]
        failures = sum(outcome for _, outcome in history)
        if self.failure_denominator == BY_ROUND_INDEX:
            if round_index is None:
                raise TrustError("round_index is required for the round_index denominator")
            return failures / round_index
        if not history:
            return 0.0
        return failures / len(history)

    def update_trust_score(self, round_index: int, client_id: str,
                           responded_in_time: bool, deviation_exceeded: bool) -> int:
        """Record one participant's round outcome and apply the trust delta.

        On-time and within the deviation threshold earns the reward. An
        on-time model that deviates too far records a failure and draws the
        ban delta. A late response records a failure and draws the penalty,
        blame, or ban delta by the failure-rate bands (boundaries 0.2 and
        0.5 belong to the harsher band).
        """
        self._require(client_id)
        if client_id not in self._participants.get(round_index, ()):
            raise TrustError(
                f"client {client_id!r} was not a participant of round {round_index}"
            )
        if any(r == round_index for r, _ in self._history[client_id]):
            raise TrustError(
                f"client {client_id!r} already has an outcome for round {round_index}"
            )
        c = self.constants
        if responded_in_time and not deviation_exceeded:
            self._history[client_id].append((round_index, SUCCESS))
            delta = c.reward
        elif responded_in_time:
            self._history[client_id].append((round_index, FAILURE))
            delta = c.ban
        else:
            self._history[client_id].append((round_index, FAILURE))
            f = self.failure_rate(client_id, round_index)
            if f < 0.2:
                delta = c.penalty
            elif f < 0.5:
                delta = c.blame
            else:
                delta = c.ban
        self._scores[client_id] += delta
        self._trust_lists[round_index].append((client_id, self._scores[client_id]))
        return self._scores[client_id]

    def credit_interested(self, client_ids):
        """Give the interested credit to eligible clients left unselected.

        No history entry is recorded: willingness is not participation.
        """
        for client_id in client_ids:
            self._require(client_id)
            self._scores[client_id] += self.constants.interested

    def trust_list(self, round_index: int):
        """The (client, score) entries appended during a round, in order."""
        return tuple(self._trust_lists.get(round_index, ()))

    def snapshot(self) -> dict:
        """Read-only copy of every client's current score."""
        return dict(self._scores)
