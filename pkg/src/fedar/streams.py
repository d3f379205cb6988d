"""Named, collision-free RNG streams.

Every random draw in the simulator comes from a generator keyed by
(master seed, domain, extra indices). Streams are independent of call
order, which is what makes parallel and serial execution bit-identical.
"""

import numpy as np

# Domain tags. Keep values stable: they are part of the determinism contract.
DATA = 0
PARTITION = 1
SELECT = 2
CLIENT = 3
LATE = 4
RESOURCE = 5
POISON = 6


def stream(master_seed: int, domain: int, *key: int) -> np.random.Generator:
    """Generator for the (domain, *key) slot under master_seed."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, domain, *key]))
