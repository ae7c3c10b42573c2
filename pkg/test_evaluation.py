"""
Tests for filtered ranking, metric aggregation, baselines, tracing and multi-seed summaries
"""
from dataclasses import replace

import numpy as np
import pytest

from modules.config import ModelConfig
from modules.embeddings import init_model
from modules.errors import ConfigError
from modules.evaluation import (
    METRICS, RankingReport, aggregate, entity_distances, evaluate_split, filtered_ranks, multi_seed_summary,
    query_distances, query_metrics, rank_answers, score_histogram, simulate_random_baseline, trace_intermediate,
)
from modules.query_model import Anchor, Or, Proj, QueryRecord, to_dnf
from modules.training import disjunctive_distance

USA, CHRISTIANITY, HINDUISM, SUNNY, INDIA = range(5)
RELIGION, CITIZEN, INV_RELIGION = range(3)


@pytest.fixture
def toy_model(toy_kg):
    return init_model(toy_kg, ModelConfig(dim=4, hidden=6), seed=5)


def test_ranks_and_metrics_by_hand():
    distances = np.array([0.5, 0.1, 0.2, 0.3, 0.45, 0.4])
    ranks = filtered_ranks(distances, [1, 4], [1, 4])
    assert ranks == [1, 4]

    metrics = query_metrics(ranks)
    assert metrics["mrr"] == pytest.approx(0.625)
    assert metrics["hits@1"] == pytest.approx(0.5)
    assert metrics["hits@3"] == pytest.approx(0.5)
    assert metrics["hits@10"] == pytest.approx(1.0)


def test_ties_count_against_the_answer():
    assert filtered_ranks(np.array([0.3, 0.3, 0.3]), [0], [0]) == [3]
    assert filtered_ranks(np.array([0.3, 0.3, 0.1]), [0], [0, 2]) == [2]


def test_other_answers_are_filtered_out():
    distances = np.array([0.1, 0.2, 0.3, 0.4])
    assert filtered_ranks(distances, [2], [0, 1, 2]) == [1]
    assert filtered_ranks(distances, [2], [2]) == [3]


def test_report_averages_per_query_then_per_structure():
    report = RankingReport()
    report.add("1p", [1])
    report.add("1p", [2, 4])
    report.add("2i", [1])
    metrics = report.metrics()
    assert metrics["1p"]["mrr"] == pytest.approx((1.0 + 0.375) / 2)
    assert metrics["AVG"]["mrr"] == pytest.approx((0.6875 + 1.0) / 2)
    assert report.counts()["1p"] == {"queries": 2, "answers": 3}

    frame = report.to_frame()
    assert list(frame.columns) == ["structure", "metric", "value"]
    assert len(frame) == 3 * len(METRICS)
    assert list(report.table().columns) == METRICS


def test_aggregate_merges_reports():
    first, second = RankingReport(), RankingReport()
    first.add("1p", [1])
    second.add("1p", [3])
    second.skipped = 2
    merged = aggregate([first, second])
    assert merged.ranks["1p"] == [[1], [3]]
    assert merged.skipped == 2
    with pytest.raises(ValueError):
        aggregate([])


def test_entity_distances_use_the_logic_reduction(toy_kg):
    for reduction, extra in (("sum", 2.0), ("mean", 0.5)):
        model = init_model(toy_kg, ModelConfig(dim=4, logic_reduction=reduction), seed=1)
        row = model.entity_features.value[USA]
        d = entity_distances(model, row, np.full(4, 0.5))
        assert d[USA] == pytest.approx(extra)
        assert np.all(d >= extra)


def test_rank_answers_skips_records_without_hard_answers(toy_model, toy_kg):
    q = Proj(RELIGION, Anchor(USA))
    empty = QueryRecord("1p", q, frozenset({CHRISTIANITY, HINDUISM}), frozenset())
    assert rank_answers(toy_model, empty, toy_kg) == []

    record = QueryRecord("1p", q, frozenset({CHRISTIANITY}), frozenset({HINDUISM}))
    ranked = rank_answers(toy_model, record, toy_kg)
    assert [a for a, _ in ranked] == [HINDUISM]
    # 5 entities minus the 2 filtered answers leaves 3 candidates
    assert 1 <= ranked[0][1] <= 4


def test_or_queries_use_the_dnf_aggregate(toy_model):
    q = Or((Proj(CITIZEN, Anchor(SUNNY)), Proj(RELIGION, Anchor(INDIA))))
    per_disjunct = [query_distances(toy_model, d) for d in to_dnf(q)]
    assert np.allclose(query_distances(toy_model, q), disjunctive_distance(per_disjunct))


def test_evaluation_is_independent_of_thread_count(small_dataset):
    _, splits, records = small_dataset
    model = init_model(splits.train, ModelConfig(dim=4, hidden=6), seed=1)
    single = evaluate_split(model, records["test"], splits, "test", threads=1)
    pooled = evaluate_split(model, records["test"], splits, "test", threads=3)
    assert single.to_dict() == pooled.to_dict()
    evaluated = sum(c["queries"] for c in single.counts().values())
    assert evaluated + single.skipped == len(records["test"])
    with pytest.raises(ValueError):
        evaluate_split(model, records["test"], splits, "train")


def test_random_baseline_is_seeded_and_in_range(small_dataset):
    _, splits, records = small_dataset
    first = simulate_random_baseline(records["test"], splits.test, trials=5, seed=4)
    second = simulate_random_baseline(records["test"], splits.test, trials=5, seed=4)
    assert first.metrics() == second.metrics()
    for metrics in first.metrics().values():
        assert 0.0 < metrics["mrr"] <= 1.0
        assert metrics["hits@1"] <= metrics["hits@3"] <= metrics["hits@10"]


def test_trace_puts_the_anchor_first(toy_model, toy_kg):
    entries = trace_intermediate(toy_model, Proj(RELIGION, Anchor(USA)), top_k=2)
    assert [e.path for e in entries] == ["root.0", "root"]
    anchor = entries[0]
    assert anchor.kind == "anchor"
    assert anchor.top[0] == (USA, 0.0)
    assert anchor.to_dict(toy_kg)["top"][0]["entity"] == "USA"
    with pytest.raises(ValueError):
        trace_intermediate(toy_model, Proj(RELIGION, Anchor(USA)), top_k=0)


def test_trace_of_an_or_query_goes_through_the_disjuncts(toy_model):
    q = Or((Proj(CITIZEN, Anchor(SUNNY)), Proj(RELIGION, Anchor(INDIA))))
    entries = trace_intermediate(toy_model, q, top_k=3)
    assert entries[-1].path == "root" and entries[-1].kind == "union"
    assert {e.path.split(".")[0] for e in entries[:-1]} == {"dnf0", "dnf1"}
    combined = query_distances(toy_model, q)
    assert entries[-1].top[0][0] == int(np.argsort(combined, kind="stable")[0])


def test_score_histogram_counts_every_entity(toy_model):
    frame = score_histogram(toy_model, Proj(RELIGION, Anchor(USA)), [CHRISTIANITY, HINDUISM], bins=4)
    assert list(frame.columns) == ["low", "high", "answers", "non_answers"]
    assert len(frame) == 4
    assert frame["answers"].sum() == 2
    assert frame["non_answers"].sum() == 3


def test_multi_seed_summary(small_dataset, tiny_config):
    _, splits, records = small_dataset
    config = replace(tiny_config, steps=4)
    with pytest.raises(ConfigError):
        multi_seed_summary(config, [1], records["train"], records["valid"], splits, "valid")

    same = multi_seed_summary(config, [3, 3], records["train"], records["valid"], splits, "valid")
    assert np.allclose(same.summary["std"], 0.0)
    assert same.to_dict()["seeds"] == [3]

    different = multi_seed_summary(config, [1, 2], records["train"], records["valid"], splits, "valid")
    assert set(different.rows["seed"]) == {1, 2}
    assert list(different.summary.columns) == ["structure", "metric", "mean", "std"]


def test_evaluation_leaves_the_model_untouched(small_dataset):
    _, splits, records = small_dataset
    model = init_model(splits.train, ModelConfig(dim=4, hidden=6), seed=2)
    before = model.checksum()
    grads = [p.grad.copy() for p in model.params()]

    evaluate_split(model, records["test"], splits, "test", threads=2)
    for record in records["test"][:3]:
        trace_intermediate(model, record.query, top_k=2)
        query_distances(model, record.query)

    assert model.checksum() == before
    assert all(np.array_equal(p.grad, g) for p, g in zip(model.params(), grads))
