"""Participant selection: trust/resource filter, rank, top fraction, subsample."""

import math

import numpy as np

from .errors import ConfigError


def eligible(trust_snapshot: dict, ra_list, min_trust) -> list:
    """Clients from the RA list meeting min_trust, best trust first.

    Ties are broken by client id ascending so the ordering is total.
    """
    keep = [cid for cid in ra_list if trust_snapshot[cid] >= min_trust]
    return sorted(keep, key=lambda cid: (-trust_snapshot[cid], cid))


def select_participants(s: list, fraction: float, subsample_ratio: float,
                        rng: np.random.Generator):
    """Split the eligible list into (candidates, participants).

    Candidates are the top ceil(|S| * fraction) of the ranked list; the
    participants are a uniform random subset of max(1, floor(|C| *
    subsample_ratio)) of them, kept in ranked order. The caller credits
    everyone in S who did not participate.
    """
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    if not 0 < subsample_ratio <= 1:
        raise ConfigError(f"subsample_ratio must be in (0, 1], got {subsample_ratio}")
    if not s:
        return [], []
    candidates = s[: math.ceil(len(s) * fraction)]
    size = max(1, int(len(candidates) * subsample_ratio))
    picked = rng.choice(len(candidates), size=size, replace=False)
    participants = [candidates[i] for i in sorted(picked)]
    return candidates, participants
