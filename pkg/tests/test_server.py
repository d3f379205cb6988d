"""Round orchestration: aggregation math, quality gates, loop behavior."""

import logging

import numpy as np
import pytest

from fedar.config import validate_config
from fedar.errors import DataError
from fedar.clientsim import ClientUpdateResult
from fedar.numcore import ModelParams, zero_params
from fedar.server import (
    LATE,
    ON_TIME,
    REJECTED_DEVIATION,
    REJECTED_SIMILARITY,
    SimilarityState,
    Simulation,
    evaluate_global,
    run_experiment,
)
from fedar.experiments import table2_config

GATES_OFF = {"gamma_mode": "off", "similarity_threshold": None}


def toy_sim(clients=None, data=None, task=None, server=None, seed=0):
    doc = {
        "seed": seed,
        "data": {"num_features": 2, "num_classes": 2, "pool_size": 200,
                 "test_cap": 40},
        "task": {"batch_size": 10, "local_epochs": 1, "eta": 0.05},
        "server": dict(GATES_OFF),
        "clients": clients or [
            {"id": "a", "labels": [0, 1], "samples": 30},
            {"id": "b", "labels": [0, 1], "samples": 30},
        ],
    }
    if data:
        doc["data"].update(data)
    if task:
        doc["task"].update(task)
    if server:
        doc["server"].update(server)
    return Simulation(validate_config(doc))


def fake_result(cid, fill, n, latency=1.0):
    params = ModelParams(np.full((2, 2), float(fill)), np.full(2, float(fill)))
    return ClientUpdateResult(cid, params, n, latency, 0.0)


def entry(result, on_time=True, effective=None):
    eff = result.virtual_latency if effective is None else effective
    return (eff, result.client_id, result, on_time)


def seeded_statuses(entries):
    return {cid: LATE for _, cid, _, _ in entries}


# -------------------------------------------------------- sync aggregation


def test_sync_single_accepted_equals_client_params():
    sim = toy_sim()
    entries = [entry(fake_result("a", 0.7, 30))]
    statuses = seeded_statuses(entries)
    params, gamma, merged = sim._aggregate_sync(entries, statuses)
    assert np.array_equal(params.weights, np.full((2, 2), 0.7))
    assert np.array_equal(params.bias, np.full(2, 0.7))
    assert statuses == {"a": ON_TIME}
    assert gamma is None and merged == []


def test_sync_equal_sizes_average():
    sim = toy_sim()
    entries = [entry(fake_result("a", 1.0, 50)), entry(fake_result("b", 3.0, 50))]
    params, _, _ = sim._aggregate_sync(entries, seeded_statuses(entries))
    assert np.allclose(params.weights, 2.0, atol=1e-12)
    assert np.allclose(params.bias, 2.0, atol=1e-12)


def test_sync_weights_quarter_and_three_quarters():
    sim = toy_sim()
    p, q = fake_result("a", 1.0, 100), fake_result("b", 2.0, 300)
    entries = [entry(p), entry(q)]
    params, _, _ = sim._aggregate_sync(entries, seeded_statuses(entries))
    expected = 0.25 * 1.0 + 0.75 * 2.0
    assert np.allclose(params.weights, expected, atol=1e-12)
    assert np.allclose(params.bias, expected, atol=1e-12)


def test_sync_excludes_late_and_status_stays_late():
    sim = toy_sim()
    entries = [entry(fake_result("a", 0.5, 30)),
               entry(fake_result("b", 9.0, 30), on_time=False)]
    statuses = seeded_statuses(entries)
    params, _, _ = sim._aggregate_sync(entries, statuses)
    assert np.allclose(params.weights, 0.5, atol=1e-12)
    assert statuses == {"a": ON_TIME, "b": LATE}


def test_sync_identical_params_is_fixed_point():
    sim = toy_sim()
    entries = [entry(fake_result("a", 0.3, 100)), entry(fake_result("b", 0.3, 17))]
    params, _, _ = sim._aggregate_sync(entries, seeded_statuses(entries))
    assert np.allclose(params.weights, 0.3, atol=1e-12)
    assert np.allclose(params.bias, 0.3, atol=1e-12)


def test_sync_all_late_leaves_global_object_unchanged():
    sim = toy_sim()
    entries = [entry(fake_result("a", 1.0, 30), on_time=False)]
    statuses = seeded_statuses(entries)
    params, _, _ = sim._aggregate_sync(entries, statuses)
    assert params is sim.params
    assert statuses == {"a": LATE}


# ------------------------------------------------------- async aggregation


def test_async_single_arrival_full_weight_equals_client_params():
    sim = toy_sim(server={"mode": "async", "mixing": 1.0})
    n_total = sim.federation.total_size
    entries = [entry(fake_result("a", 0.9, n_total))]
    statuses = seeded_statuses(entries)
    params, _, _ = sim._aggregate_async(entries, statuses)
    assert np.allclose(params.weights, 0.9, atol=1e-12)
    assert np.allclose(params.bias, 0.9, atol=1e-12)
    assert statuses == {"a": ON_TIME}


def test_async_identical_arrivals_are_a_fixed_point():
    sim = toy_sim(server={"mode": "async", "mixing": 0.7})
    sim.params = ModelParams(np.full((2, 2), 0.4), np.full(2, 0.4))
    entries = [entry(fake_result("a", 0.4, 30)), entry(fake_result("b", 0.4, 30))]
    params, _, _ = sim._aggregate_async(entries, seeded_statuses(entries))
    assert np.allclose(params.weights, 0.4, atol=1e-12)
    assert np.allclose(params.bias, 0.4, atol=1e-12)


def mix(start, arrivals, mixing, n_total):
    w = start
    for fill, n in arrivals:
        alpha = mixing * n / n_total
        w = (1.0 - alpha) * w + alpha * fill
    return w


def test_async_arrival_order_changes_the_result():
    p, q = ("a", 1.0, 100), ("b", 5.0, 40)
    oracles = {}
    finals = {}
    for order in ((p, q), (q, p)):
        sim = toy_sim(server={"mode": "async", "mixing": 1.0})
        n_total = sim.federation.total_size
        entries = [entry(fake_result(cid, fill, n)) for cid, fill, n in order]
        params, _, _ = sim._aggregate_async(entries, seeded_statuses(entries))
        finals[order] = params
        oracles[order] = mix(0.0, [(fill, n) for _, fill, n in order], 1.0, n_total)
    for order, params in finals.items():
        assert np.allclose(params.weights, oracles[order], atol=1e-12)
        assert np.allclose(params.bias, oracles[order], atol=1e-12)
    a, b = finals.values()
    assert not np.allclose(a.weights, b.weights, atol=1e-9)


def test_async_skips_late_when_merge_late_off():
    sim = toy_sim(server={"mode": "async"})
    entries = [entry(fake_result("a", 2.0, 30), on_time=False, effective=40.0)]
    statuses = seeded_statuses(entries)
    params, _, merged = sim._aggregate_async(entries, statuses)
    assert np.array_equal(params.weights, sim.params.weights)
    assert statuses == {"a": LATE}
    assert merged == []


def test_async_merges_late_when_enabled_but_status_stays_late():
    sim = toy_sim(server={"mode": "async", "merge_late": True, "mixing": 1.0})
    entries = [entry(fake_result("a", 2.0, 30), on_time=False, effective=40.0)]
    statuses = seeded_statuses(entries)
    params, _, merged = sim._aggregate_async(entries, statuses)
    assert not np.array_equal(params.weights, sim.params.weights)
    assert statuses == {"a": LATE}
    assert merged == [40.0]


# ----------------------------------------------------------- quality gates


def test_gates_off_accept_extreme_deviants():
    sim = toy_sim()
    entries = [entry(fake_result("a", 0.1, 30)), entry(fake_result("b", 1e6, 30))]
    statuses = seeded_statuses(entries)
    sim._aggregate_sync(entries, statuses)
    assert statuses == {"a": ON_TIME, "b": ON_TIME}


def test_infinite_gamma_and_loose_similarity_accept_all_on_time():
    # gamma = inf plus threshold above 1 disables both gates explicitly.
    sim = toy_sim(
        task={"gamma": "inf"},
        server={"gamma_mode": "fixed", "similarity_threshold": 1.01},
    )
    entries = [entry(fake_result("a", 1e8, 30)), entry(fake_result("b", 1e8, 30))]
    statuses = seeded_statuses(entries)
    sim._aggregate_sync(entries, statuses)
    assert statuses == {"a": ON_TIME, "b": ON_TIME}


def test_fixed_gamma_rejects_distant_update():
    sim = toy_sim(task={"gamma": 1.0},
                  server={"gamma_mode": "fixed", "similarity_threshold": None})
    near, far = fake_result("a", 0.1, 30), fake_result("b", 100.0, 30)
    entries = [entry(near), entry(far)]
    statuses = seeded_statuses(entries)
    params, gamma, _ = sim._aggregate_sync(entries, statuses)
    assert gamma == 1.0
    assert statuses == {"a": ON_TIME, "b": REJECTED_DEVIATION}
    assert np.allclose(params.weights, 0.1, atol=1e-12)


def test_similarity_gate_rejects_second_parallel_history():
    sim = toy_sim(server={"gamma_mode": "off", "similarity_threshold": 0.99})
    entries = [entry(fake_result("a", 2.0, 30)), entry(fake_result("b", 2.0, 30))]
    statuses = seeded_statuses(entries)
    params, _, _ = sim._aggregate_sync(entries, statuses)
    assert statuses == {"a": ON_TIME, "b": REJECTED_SIMILARITY}
    assert np.allclose(params.weights, 2.0, atol=1e-12)


def test_similarity_state_units():
    state = SimilarityState(3)
    assert state.max_cosine("ghost") == 0.0
    state.update("z", np.zeros(3))
    assert state.max_cosine("z") == 0.0
    state.update("a", np.array([1.0, 0.0, 0.0]))
    state.update("b", np.array([2.0, 0.0, 0.0]))
    assert state.max_cosine("b") == pytest.approx(1.0)
    state.update("c", np.array([0.0, 1.0, 0.0]))
    assert state.max_cosine("c") < 0.5
    with pytest.raises(DataError):
        state.update("a", np.zeros(4))


def test_adaptive_gamma_calibrates_from_median_distance():
    sim = toy_sim(server={"gamma_mode": "adaptive", "gamma_factor": 3.0})
    assert sim._gamma_for_gating([1.0, 2.0, 10.0]) == pytest.approx(6.0)
    # Later rounds re-estimate from the accepted updates only.
    sim._refresh_gamma([4.0])
    assert sim._gamma_for_gating([0.5]) == pytest.approx(12.0)


def test_gamma_mode_fallbacks():
    adaptive = toy_sim(server={"gamma_mode": "adaptive"}, task={"gamma": 7.5})
    assert adaptive._gamma_for_gating([]) == 7.5
    fixed = toy_sim(server={"gamma_mode": "fixed"}, task={"gamma": 7.5})
    assert fixed._gamma_for_gating([1.0, 1.0]) == 7.5
    off = toy_sim()
    assert off._gamma_for_gating([1.0]) is None


# ---------------------------------------------------------- the round loop


def test_round_skipped_when_nobody_meets_min_trust(caplog):
    sim = toy_sim(task={"min_trust": 10000})
    with caplog.at_level(logging.WARNING, logger="fedar.server"):
        record = sim.run_round(1)
    assert "no eligible clients" in caplog.text
    assert record.participants == ()
    assert record.statuses == {}
    assert record.virtual_time == 25.0


def test_max_rounds_zero_returns_no_records_after_registration():
    sim = toy_sim(task={"max_rounds": 0})
    assert sim.run() == []
    assert sim.ledger.snapshot() == {"a": 50, "b": 50}


def test_target_accuracy_stops_the_loop_early():
    probe = toy_sim(task={"max_rounds": 1})
    round_one_accuracy = probe.run()[0].test_accuracy
    assert round_one_accuracy > 0
    sim = toy_sim(task={"max_rounds": 10,
                        "target_accuracy": round_one_accuracy})
    records = sim.run()
    assert len(records) == 1


def test_rerun_with_same_seed_reproduces_records():
    doc = {
        "seed": 5,
        "data": {"num_features": 3, "num_classes": 2, "pool_size": 300,
                 "test_cap": 50},
        "task": {"batch_size": 10, "local_epochs": 2, "eta": 0.05,
                 "max_rounds": 4, "subsample_ratio": 0.5},
        "server": dict(GATES_OFF),
        "clients": [
            {"id": f"c{i}", "labels": [0, 1], "samples": 30} for i in range(4)
        ],
    }
    first = run_experiment(validate_config(doc))
    second = run_experiment(validate_config(doc))
    assert len(first) == len(second) == 4
    for x, y in zip(first, second):
        assert x.participants == y.participants
        assert x.statuses == y.statuses
        assert x.interested == y.interested
        assert x.arrival_order == y.arrival_order
        assert x.test_loss == y.test_loss
        assert x.test_accuracy == y.test_accuracy
        assert x.trust == y.trust
        assert x.virtual_time == y.virtual_time


def test_parallel_workers_match_serial_bitwise():
    clients = [{"id": f"c{i}", "labels": [0, 1], "samples": 30} for i in range(4)]
    serial = toy_sim(clients=clients, task={"max_rounds": 3})
    parallel = toy_sim(clients=clients, task={"max_rounds": 3},
                       server={"parallel_workers": 4})
    rs, rp = serial.run(), parallel.run()
    assert np.array_equal(serial.params.weights, parallel.params.weights)
    assert np.array_equal(serial.params.bias, parallel.params.bias)
    for x, y in zip(rs, rp):
        assert x.test_loss == y.test_loss
        assert x.trust == y.trust
        assert x.arrival_order == y.arrival_order


def test_async_single_client_matches_sync():
    solo = [{"id": "solo", "labels": [0, 1], "samples": 40}]
    sync_sim = toy_sim(clients=solo, task={"max_rounds": 3})
    async_sim = toy_sim(clients=solo, task={"max_rounds": 3},
                        server={"mode": "async", "mixing": 1.0})
    sync_records = sync_sim.run()
    async_records = async_sim.run()
    assert np.array_equal(sync_sim.params.weights, async_sim.params.weights)
    assert np.array_equal(sync_sim.params.bias, async_sim.params.bias)
    for x, y in zip(sync_records, async_records):
        assert x.test_accuracy == y.test_accuracy


def test_each_participant_gets_exactly_one_status():
    sim = toy_sim(task={"max_rounds": 2})
    for record in sim.run():
        assert set(record.statuses) == set(record.participants)
        assert all(
            s in (ON_TIME, LATE, REJECTED_DEVIATION, REJECTED_SIMILARITY)
            for s in record.statuses.values()
        )


def test_round_of_only_stragglers_leaves_model_unchanged():
    late = {"kind": "straggler", "late_probability": 1.0}
    clients = [
        {"id": "s1", "labels": [0, 1], "samples": 30, "behavior": late},
        {"id": "s2", "labels": [0, 1], "samples": 30, "behavior": late},
    ]
    sim = toy_sim(clients=clients, task={"max_rounds": 1})
    record = sim.run()[0]
    assert set(record.statuses.values()) == {LATE}
    zero = zero_params(2, 2)
    assert np.array_equal(sim.params.weights, zero.weights)
    # One late failure in one round: failure rate 1.0, so the ban applies.
    assert record.trust == {"s1": 34, "s2": 34}


def test_merge_late_changes_model_and_clock_but_not_status():
    clients = [
        {"id": "ok", "labels": [0, 1], "samples": 30},
        {"id": "slow", "labels": [0, 1], "samples": 30,
         "behavior": {"kind": "straggler", "late_probability": 1.0}},
    ]
    runs = {}
    for merge in (False, True):
        sim = toy_sim(clients=clients, task={"max_rounds": 1},
                      server={"mode": "async", "merge_late": merge})
        runs[merge] = (sim.run()[0], sim.params)
    off_record, off_params = runs[False]
    on_record, on_params = runs[True]
    assert off_record.statuses == on_record.statuses
    assert off_record.statuses["slow"] == LATE
    assert not np.array_equal(off_params.weights, on_params.weights)
    assert off_record.virtual_time == 25.0
    assert on_record.virtual_time > 25.0
    # Behavior lateness stacks the timeout on top of the compute latency.
    assert on_record.arrival_order == ("ok", "slow")


def test_sync_clock_steps_by_timeout_each_round():
    sim = toy_sim(task={"max_rounds": 3})
    times = [r.virtual_time for r in sim.run()]
    assert times == [25.0, 50.0, 75.0]


def test_evaluate_global_rejects_empty_test_set():
    params = zero_params(2, 2)
    with pytest.raises(DataError):
        evaluate_global(params, np.empty((0, 2)), np.empty(0, dtype=np.int64))


def test_accuracy_strictly_increases_early_in_most_seeds():
    # 20-seed check of the early-training trend under B=10, E=20.
    wins = 0
    for seed in range(20):
        doc = table2_config()
        doc["seed"] = seed
        doc["task"].update({"batch_size": 10, "local_epochs": 20, "max_rounds": 5})
        doc["server"] = dict(GATES_OFF)
        records = run_experiment(validate_config(doc))
        curve = [r.test_accuracy for r in records]
        wins += all(b > a for a, b in zip(curve, curve[1:]))
    assert wins >= 18
