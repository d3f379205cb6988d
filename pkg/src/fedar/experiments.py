"""Experiment drivers: run a config to CSV artifacts, plus the two sweeps.

All output is deterministic: float cells are written with repr (shortest
round-trip form) and files use explicit newline handling, so rerunning
the same config and seed reproduces every byte.
"""

import copy
import csv
import logging
from pathlib import Path

from .config import validate_config
from .errors import ConfigError
from .server import (
    LATE,
    ON_TIME,
    REJECTED_DEVIATION,
    REJECTED_SIMILARITY,
    Simulation,
)

logger = logging.getLogger(__name__)

ROUNDS_COLUMNS = (
    "round",
    "mode",
    "participants",
    "on_time",
    "late",
    "rejected_deviation",
    "rejected_similarity",
    "test_loss",
    "test_accuracy",
    "virtual_time",
)

BATCH_EPOCH_GRID = ((10, 5), (10, 20), (20, 5), (20, 20))
STRAGGLER_COUNTS = (0, 2, 4)


def _fmt(value) -> str:
    return repr(float(value))


def _rounds_row(record):
    return [
        record.round_index,
        record.mode,
        len(record.participants),
        record.status_count(ON_TIME),
        record.status_count(LATE),
        record.status_count(REJECTED_DEVIATION),
        record.status_count(REJECTED_SIMILARITY),
        _fmt(record.test_loss),
        _fmt(record.test_accuracy),
        _fmt(record.virtual_time),
    ]


def write_rounds_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_COLUMNS)
        for record in records:
            writer.writerow(_rounds_row(record))


def write_trust_csv(records, client_ids, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", *client_ids])
        for record in records:
            writer.writerow([record.round_index, *(record.trust[c] for c in client_ids)])


def write_summary(records, client_ids, target_accuracy, path):
    lines = []
    if records:
        final = records[-1]
        lines.append(f"rounds_run={final.round_index}")
        lines.append(f"final_test_accuracy={_fmt(final.test_accuracy)}")
        lines.append(f"final_test_loss={_fmt(final.test_loss)}")
    else:
        lines.append("rounds_run=0")
    if target_accuracy is None:
        lines.append("rounds_to_target=no_target")
    else:
        reached = [r.round_index for r in records if r.test_accuracy >= target_accuracy]
        lines.append(
            f"rounds_to_target={reached[0] if reached else 'not_reached'}"
        )
    for cid in client_ids:
        counts = {ON_TIME: 0, LATE: 0, REJECTED_DEVIATION: 0, REJECTED_SIMILARITY: 0}
        interested = 0
        for record in records:
            if cid in record.statuses:
                counts[record.statuses[cid]] += 1
            if cid in record.interested:
                interested += 1
        lines.append(
            f"client {cid}: on_time={counts[ON_TIME]} late={counts[LATE]} "
            f"rejected_deviation={counts[REJECTED_DEVIATION]} "
            f"rejected_similarity={counts[REJECTED_SIMILARITY]} interested={interested}"
        )
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def run_to_dir(doc: dict, out_dir, seed=None):
    """Run one experiment and write rounds.csv, trust.csv, summary.txt."""
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["seed"] = seed
    cfg = validate_config(doc)
    records = Simulation(cfg).run()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    client_ids = [c.id for c in cfg.clients]
    write_rounds_csv(records, out_dir / "rounds.csv")
    write_trust_csv(records, client_ids, out_dir / "trust.csv")
    write_summary(records, client_ids, cfg.task.target_accuracy, out_dir / "summary.txt")
    logger.info("wrote %d round records to %s", len(records), out_dir)
    return records


def _write_comparison(path, extra_columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*extra_columns, *ROUNDS_COLUMNS])
        writer.writerows(rows)


def sweep_batch_epochs(doc: dict, out_dir, seed=None):
    """Run the batch-size / local-epoch grid; one subdirectory per cell."""
    out_dir = Path(out_dir)
    rows = []
    for batch_size, epochs in BATCH_EPOCH_GRID:
        cell = copy.deepcopy(doc)
        cell.setdefault("task", {})["batch_size"] = batch_size
        cell["task"]["local_epochs"] = epochs
        records = run_to_dir(cell, out_dir / f"b{batch_size}_e{epochs}", seed=seed)
        rows.extend([batch_size, epochs, *_rounds_row(r)] for r in records)
    _write_comparison(out_dir / "comparison.csv", ("batch_size", "local_epochs"), rows)
    return out_dir


def sweep_stragglers(doc: dict, out_dir, seed=None):
    """Rerun the base config with 0, 2, and 4 clients turned into stragglers."""
    base_cfg = validate_config(copy.deepcopy(doc))
    candidates = base_cfg.sweep.straggler_candidates
    if len(candidates) < max(STRAGGLER_COUNTS):
        raise ConfigError(
            f"sweep.straggler_candidates: need at least {max(STRAGGLER_COUNTS)} ids "
            f"for the straggler sweep, got {len(candidates)}"
        )
    out_dir = Path(out_dir)
    rows = []
    for count in STRAGGLER_COUNTS:
        cell = copy.deepcopy(doc)
        slow = set(candidates[:count])
        for entry in cell["clients"]:
            if entry["id"] in slow:
                behavior = dict(entry.get("behavior", {}))
                behavior["kind"] = "straggler"
                behavior["late_probability"] = base_cfg.sweep.late_probability
                behavior["latency_multiplier"] = base_cfg.sweep.latency_multiplier
                entry["behavior"] = behavior
        records = run_to_dir(cell, out_dir / f"stragglers_{count}", seed=seed)
        rows.extend([count, *_rounds_row(r)] for r in records)
    _write_comparison(out_dir / "comparison.csv", ("stragglers",), rows)
    return out_dir


def table2_config() -> dict:
    """The built-in 12-robot federation as a ready-to-run config document."""
    full = list(range(10))
    robots = [
        ("robot-01", full, "Softmax", 1000),
        ("robot-02", full, "ReLu", 1000),
        ("robot-03", [0, 1, 2, 3], "Softmax", 400),
        ("robot-04", full, "Softmax", 1000),
        ("robot-05", [4, 5, 6], "ReLu", 300),
        ("robot-06", [7, 8, 9], "ReLu", 300),
        ("robot-07", full, "Softmax", 1000),
        ("robot-08", full, "ReLu", 1000),
        ("robot-09", [5, 6, 8], "Softmax", 300),
        ("robot-10", full, "Softmax", 1000),
        ("robot-11", full, "ReLu", 1000),
        ("robot-12", full, "Softmax", 1000),
    ]
    return {
        "seed": 0,
        "task": {
            "batch_size": 20,
            "local_epochs": 5,
            "max_rounds": 30,
        },
        "clients": [
            {"id": cid, "labels": labels, "samples": samples, "activation": activation}
            for cid, labels, activation, samples in robots
        ],
        "sweep": {
            # Full-coverage robots: slowing these changes timing, not label reach.
            "straggler_candidates": ["robot-01", "robot-02", "robot-04", "robot-07"]
        },
    }
