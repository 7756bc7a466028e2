from __future__ import annotations

import io
import json

import numpy as np
import pytest

from essograph.citest import DEPENDENT, INDEPENDENT, ProtocolError, audit_closure, iter_statements
from essograph.graph import MixedGraph, dag, essential_graph_of
from essograph.synth import (
    ConfigError,
    Cpts,
    ExperimentConfig,
    OracleLedger,
    StructDiff,
    forward_sample,
    parse_experiment_config,
    random_dag,
    run_experiment,
    run_trial,
    sample_cpts,
    spurious_edge_rate,
    struct_diff,
)


def test_random_dag_edge_cases():
    assert random_dag(5, 0.0, 3, 1).directed == frozenset()
    full = random_dag(5, 1.0, 5, 1)
    assert len(full.directed) == 10 and full.is_dag()
    assert random_dag(6, 0.5, 2, 9) == random_dag(6, 0.5, 2, 9)
    capped = random_dag(8, 1.0, 2, 3)
    assert max(len(capped.parents(v)) for v in range(8)) == 2
    with pytest.raises(ValueError):
        random_dag(3, 1.5)


def test_cpt_rows_are_distributions():
    g = random_dag(6, 0.5, 3, 4)
    cpts = sample_cpts(g, [2, 3, 2, 4, 2, 3], 0.5, 4)
    for v, t in enumerate(cpts.tables):
        assert t.shape == (int(np.prod([cpts.cardinalities[p] for p in cpts.parents[v]])), cpts.cardinalities[v])
        assert np.all(np.abs(t.sum(axis=1) - 1.0) <= 1e-12)
    with pytest.raises(ValueError):
        Cpts([()], [2], [np.array([[0.5, 0.6]])])
    with pytest.raises(ValueError):
        sample_cpts(MixedGraph(2, (), [(0, 1)]))


def test_forward_sample_deterministic_cpts():
    g = dag(3, [(0, 1), (1, 2)])
    cpts = Cpts(
        [(), (0,), (1,)],
        [2, 2, 2],
        [np.array([[0.5, 0.5]]), np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 1.0]])],
    )
    ds = forward_sample(g, cpts, 200, 3)
    assert np.all(ds.rows[:, 1] == 1 - ds.rows[:, 0])
    assert np.all(ds.rows[:, 2] == ds.rows[:, 1])
    with pytest.raises(ValueError):
        forward_sample(g, cpts, 0)


def test_forward_sample_converges_to_factorization():
    g = dag(2, [(0, 1)])
    cpts = Cpts([(), (0,)], [2, 2], [np.array([[0.3, 0.7]]), np.array([[0.9, 0.1], [0.2, 0.8]])])
    ds = forward_sample(g, cpts, 200_000, 1)
    joint = np.zeros((2, 2))
    np.add.at(joint, (ds.rows[:, 0], ds.rows[:, 1]), 1)
    joint /= joint.sum()
    expect = np.array([[0.3 * 0.9, 0.3 * 0.1], [0.7 * 0.2, 0.7 * 0.8]])
    assert np.abs(joint - expect).max() < 0.005


def test_oracle_ledger_answers():
    collider = dag(3, [(0, 1), (2, 1)])
    led = OracleLedger(collider)
    assert led.determine(0, 2) == INDEPENDENT
    assert led.determine(0, 2, (1,)) == DEPENDENT
    chain = OracleLedger(dag(3, [(0, 1), (1, 2)]))
    assert chain.determine(0, 2, (1,)) == INDEPENDENT
    calls = chain.meter.test_calls
    chain.determine(2, 0, (1,))
    assert chain.meter.test_calls == calls
    with pytest.raises(ProtocolError):
        chain.set_sepset(0, 1, ())
    with pytest.raises(ValueError):
        OracleLedger(MixedGraph(2, (), [(0, 1)]))


def test_oracle_ledgers_are_closed():
    for seed in range(40):
        g = random_dag(6, 0.4, 3, seed)
        led = OracleLedger(g)
        for a, b, S in iter_statements(6, 4):
            led.determine(a, b, S)
        assert audit_closure(led.entries) == []


def test_struct_diff():
    truth = random_dag(7, 0.4, 3, 2)
    assert struct_diff(essential_graph_of(truth), truth) == StructDiff(0, 0, 0, 0)
    five = dag(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
    d = struct_diff(MixedGraph(6), five)
    assert (d.missing_edges, d.extra_edges) == (5, 0)
    wrong = MixedGraph(3, [(0, 1), (2, 1)])
    d2 = struct_diff(wrong, dag(3, [(0, 1), (1, 2)]))
    assert d2.immorality_diff == 1 and d2.directed_mismatches == 2 and not d2.zero
    with pytest.raises(ValueError):
        struct_diff(MixedGraph(2), MixedGraph(3))


def test_parse_experiment_config():
    cfg = parse_experiment_config("trials = 3\nd=5  # five nodes\nmode = data\nconsistency = off\n\n")
    assert (cfg.trials, cfg.d, cfg.mode, cfg.consistency) == (3, 5, "data", False)
    for bad in ["colour = red", "trials", "trials = many", "mode = guess", "alpha = 2", "consistency = maybe"]:
        with pytest.raises(ConfigError):
            parse_experiment_config(bad)


def test_oracle_trial_zero_diff():
    rec = run_trial(ExperimentConfig(d=4, mode="oracle"), 0)
    assert rec["extra_edges"] == rec["missing_edges"] == rec["immorality_diff"] == rec["directed_mismatches"] == 0


def test_run_experiment_writes_json_lines():
    buf = io.StringIO()
    res = run_experiment(ExperimentConfig(trials=3, d=5, mode="data", n=300), buf)
    lines = buf.getvalue().splitlines()
    assert [json.loads(x) for x in lines] == res
    assert [r["trial"] for r in res] == [0, 1, 2]
    again = io.StringIO()
    run_experiment(ExperimentConfig(trials=3, d=5, mode="data", n=300), again)
    assert again.getvalue() == buf.getvalue()


def test_parallel_trials_match_serial():
    cfg = ExperimentConfig(trials=4, d=5, mode="data", n=300, seed=3)
    a, b = io.StringIO(), io.StringIO()
    run_experiment(cfg, a, workers=1)
    run_experiment(cfg, b, workers=2)
    assert a.getvalue() == b.getvalue()


def test_zero_trials():
    buf = io.StringIO()
    assert run_experiment(ExperimentConfig(trials=0), buf) == []
    assert buf.getvalue() == ""


def test_spurious_edge_rate_small_run():
    rate = spurious_edge_rate(d=4, n=2000, seeds=range(60))
    assert 0.0 <= rate <= 0.15
