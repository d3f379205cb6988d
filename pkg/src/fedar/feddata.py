"""Federated dataset construction.

Builds the per-client datasets the simulator trains on: load IDX-format
digit files when available, fall back to a synthetic digit-like task,
partition a pool across clients by label set, shuffle into minibatches,
and apply label-flip poisoning.

Feature vectors are always float64 rows in [0, 1] of length
``num_features``; labels are int64 in ``[0, num_classes)``.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    PartitionError,
)
from .numcore import Batch

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Synthetic task shape. Class prototypes are fixed (independent of the data
# seed) so every experiment trains against the same underlying task and only
# the sampling noise varies per seed.
_PROTOTYPE_SEED = 1301
_PROTOTYPE_SPREAD = 0.10
_SAMPLE_SIGMA = 0.95


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One client's local training data.

    Every label must belong to ``label_set``. Empty datasets are allowed
    here; a client with no data abstains from training and never enters
    the per-round resource-availability list.
    """

    client_id: str
    features: np.ndarray  # (n, num_features) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    label_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise DataError("features must be 2-d and labels 1-d")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"client {self.client_id}: {self.features.shape[0]} feature rows "
                f"vs {self.labels.shape[0]} labels"
            )
        if len(self.labels):
            present = set(np.unique(self.labels).tolist())
            if not present <= set(self.label_set):
                raise DataError(
                    f"client {self.client_id}: labels {sorted(present - set(self.label_set))} "
                    f"outside permitted set {sorted(self.label_set)}"
                )

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True, eq=False)
class FederationData:
    """All client datasets plus the held-out test split.

    ``total_size`` is the sum of client dataset sizes (the ``n`` that
    weights every aggregation). The test split is disjoint from every
    client's training samples by construction.
    """

    clients: tuple
    test_features: np.ndarray
    test_labels: np.ndarray
    total_size: int

    def client(self, client_id: str) -> ClientDataset:
        for ds in self.clients:
            if ds.client_id == client_id:
                return ds
        raise KeyError(client_id)


@dataclass(frozen=True)
class PoisonSpec:
    """Label-flip attack: remap a fraction of labels to wrong classes."""

    flip_fraction: float
    label_map_seed: int

    def __post_init__(self):
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise DataError(
                f"flip_fraction must lie in [0, 1], got {self.flip_fraction}"
            )


def _read_exact(fh, count: int, path, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise IdxTruncatedError(
            f"{path}: expected {count} bytes of {what}, file ends after {len(data)}"
        )
    return data


def load_idx(images_path, labels_path):
    """Load an IDX image/label file pair into (features, labels) arrays.

    Pixel bytes are scaled to [0, 1] by division by 255 and each image is
    flattened row-major. The two files must describe the same number of
    items. Magic numbers, counts, and payload lengths are all checked and
    produce distinct errors.
    """
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path, "header"))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxMagicError(
                f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        raw = _read_exact(fh, count * rows * cols, images_path, "pixel data")
    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, labels_path, "header"))
        if magic != IDX_LABELS_MAGIC:
            raise IdxMagicError(
                f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        if label_count != count:
            raise IdxCountMismatchError(
                f"{labels_path}: {label_count} labels for {count} images in {images_path}"
            )
        raw_labels = _read_exact(fh, label_count, labels_path, "label data")
    features = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    features = features.reshape(count, rows * cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return features, labels


def synth_digits(num_samples: int, num_classes: int, seed, num_features: int = 784):
    """Generate a synthetic stand-in for the digit task.

    Samples are class-conditional Gaussian blobs around fixed per-class
    prototype vectors, clamped to [0, 1]. Class counts are balanced to
    within one sample. Deterministic per seed; the prototypes themselves
    are shared by all seeds so different seeds pose the same task.
    """
    if num_samples <= 0:
        raise DataError(f"num_samples must be positive, got {num_samples}")
    proto_rng = np.random.default_rng(_PROTOTYPE_SEED)
    prototypes = 0.5 + _PROTOTYPE_SPREAD * proto_rng.standard_normal(
        (num_classes, num_features)
    )
    rng = np.random.default_rng(seed)
    # Balanced labels: tile the classes, give the remainder to the lowest
    # classes, then permute. A plain multinomial draw would not keep class
    # counts tight.
    base, extra = divmod(num_samples, num_classes)
    counts = np.full(num_classes, base)
    counts[:extra] += 1
    labels = rng.permutation(np.repeat(np.arange(num_classes), counts))
    features = prototypes[labels] + _SAMPLE_SIGMA * rng.standard_normal(
        (num_samples, num_features)
    )
    np.clip(features, 0.0, 1.0, out=features)
    return features, labels.astype(np.int64)


def partition(table, pool_features, pool_labels, *, test_cap: int = 2000, seed=0):
    """Split a sample pool into client datasets per a (id, labels, count) table.

    Each client receives exactly ``count`` samples drawn without replacement
    from the pool restricted to its label set, spread as evenly as possible
    across those labels. Whatever remains becomes the test split, capped at
    ``test_cap`` samples drawn uniformly.
    """
    rng = np.random.default_rng(seed)
    remaining = {}
    for label in np.unique(pool_labels).tolist():
        idx = np.flatnonzero(pool_labels == label)
        remaining[label] = list(rng.permutation(idx))

    clients = []
    for client_id, label_set, count in table:
        wanted = sorted(label_set)
        if not wanted and count > 0:
            raise PartitionError(f"client {client_id}: empty label set")
        base, extra = divmod(count, len(wanted)) if wanted else (0, 0)
        chosen = []
        for pos, label in enumerate(wanted):
            need = base + (1 if pos < extra else 0)
            have = remaining.get(label, [])
            if len(have) < need:
                raise PartitionError(
                    f"client {client_id}: needs {need} samples of label {label}, "
                    f"pool has {len(have)} left"
                )
            chosen.extend(have[:need])
            remaining[label] = have[need:]
        chosen = np.array(sorted(chosen), dtype=np.intp)
        clients.append(
            ClientDataset(
                client_id=client_id,
                features=pool_features[chosen].copy(),
                labels=pool_labels[chosen].copy(),
                label_set=frozenset(label_set),
            )
        )

    leftovers = np.array(
        sorted(i for idxs in remaining.values() for i in idxs), dtype=np.intp
    )
    if len(leftovers) == 0:
        logger.warning("partition used the entire pool; test set is empty")
        take = leftovers
    else:
        take = rng.permutation(leftovers)[: min(test_cap, len(leftovers))]
        take = np.sort(take)
    total = sum(len(c) for c in clients)
    return FederationData(
        clients=tuple(clients),
        test_features=pool_features[take].copy(),
        test_labels=pool_labels[take].copy(),
        total_size=total,
    )


def shuffle_and_batch(ds: ClientDataset, batch_size: int, seed):
    """One epoch's minibatches: seeded shuffle, contiguous slices, short tail kept."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    perm = np.random.default_rng(seed).permutation(len(ds))
    features = ds.features[perm]
    labels = ds.labels[perm]
    return [
        Batch(features[start : start + batch_size], labels[start : start + batch_size])
        for start in range(0, len(ds), batch_size)
    ]


def poison(ds: ClientDataset, spec: PoisonSpec, num_classes: int = 10) -> ClientDataset:
    """Flip the labels of ``floor(flip_fraction * n)`` seeded-chosen samples.

    Each flipped label is remapped to a uniformly random *different* class,
    so flip_fraction = 1 changes every label. Features are never touched.
    The permitted label set widens to cover the new labels.
    """
    flips = int(spec.flip_fraction * len(ds))
    if flips == 0:
        return ds
    rng = np.random.default_rng(spec.label_map_seed)
    idx = rng.choice(len(ds), size=flips, replace=False)
    labels = ds.labels.copy()
    # Adding 1..num_classes-1 modulo num_classes can never map a label to itself.
    offsets = rng.integers(1, num_classes, size=flips)
    labels[idx] = (labels[idx] + offsets) % num_classes
    return ClientDataset(
        client_id=ds.client_id,
        features=ds.features,
        labels=labels,
        label_set=frozenset(ds.label_set) | set(np.unique(labels[idx]).tolist()),
    )
