"""
Tests for synthetic graph generation and query sampling
"""
import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import build_kg
from modules.config import GenSpec
from modules.dataset_gen import generate_dataset, generate_kg, generate_queries, sample_queries
from modules.errors import GenerationError
from modules.query_model import classify_structure, load_records, oracle_answer


def test_split_sizes_and_nesting(small_dataset, small_spec):
    _, splits, _ = small_dataset
    assert len(splits.train) == small_spec.train_edges
    assert len(splits.valid) == small_spec.train_edges + small_spec.valid_edges
    assert len(splits.test) == small_spec.train_edges + small_spec.valid_edges + small_spec.test_edges
    assert splits.train.triples <= splits.valid.triples <= splits.test.triples


def test_every_entity_and_relation_is_in_train(small_dataset, small_spec):
    _, splits, _ = small_dataset
    heads = {h for h, _, _ in splits.train.triples}
    relations = {r for _, r, _ in splits.train.triples}
    assert heads == set(range(small_spec.n_entities))
    assert relations == set(range(2 * small_spec.n_relations))


def test_inverse_edges_are_materialized(small_dataset):
    _, splits, _ = small_dataset
    names = splits.relations
    for h, r, t in splits.test.triples:
        name = names.name(r)
        inverse = ("-" if name.startswith("+") else "+") + name[1:]
        assert (t, names.id(inverse), h) in splits.test.triples


def test_average_degree_is_close_to_edges_per_entity(small_dataset, small_spec):
    _, splits, _ = small_dataset
    forward = [t for t in splits.train.triples if splits.relations.name(t[1]).startswith("+")]
    expected = (small_spec.train_edges / 2) / small_spec.n_entities
    assert 0.5 * expected <= len(forward) / small_spec.n_entities <= 1.5 * expected


def test_query_counts_per_split(small_dataset, small_spec):
    _, _, records = small_dataset
    train_tags = [r.tag for r in records["train"]]
    for tag in ("1p", "2p", "2i"):
        assert train_tags.count(tag) == small_spec.train_queries
    assert train_tags.count("2in") == round(small_spec.negation_ratio * small_spec.train_queries)
    for which in ("valid", "test"):
        tags = [r.tag for r in records[which]]
        assert sorted(set(tags)) == sorted(small_spec.eval_structures)
        assert all(tags.count(t) == small_spec.eval_queries for t in small_spec.eval_structures)


def test_stored_answers_recheck_against_the_oracle(small_dataset, small_spec):
    _, splits, records = small_dataset
    for record in records["train"]:
        assert classify_structure(record.query) == record.tag
        assert not record.answers_easy
        assert record.answers_hard == oracle_answer(splits.train, record.query)
        assert len(record.answers) <= small_spec.answer_cap

    for which in ("valid", "test"):
        previous = splits.previous(which)
        for record in records[which]:
            assert classify_structure(record.query) == record.tag
            assert record.answers_hard
            assert not record.answers_hard & record.answers_easy
            assert record.answers == oracle_answer(splits[which], record.query)
            assert record.answers_easy == oracle_answer(previous, record.query) & record.answers
            assert not record.answers_hard & oracle_answer(previous, record.query)


def test_dataset_files_reload(small_dataset, small_spec):
    data_dir, splits, records = small_dataset
    for which in ("train", "valid", "test"):
        assert (data_dir / f"{which}.txt").is_file()
        assert load_records(data_dir / f"{which}-queries.jsonl", splits[which]) == records[which]
    stored = json.loads((data_dir / "spec.json").read_text(encoding="utf-8"))
    assert GenSpec.from_dict(stored) == small_spec


def test_same_seed_gives_identical_files(tmp_path, small_dataset, small_spec):
    data_dir, _, _ = small_dataset
    generate_dataset(small_spec, tmp_path)
    for path in sorted(data_dir.iterdir()):
        assert (tmp_path / path.name).read_bytes() == path.read_bytes(), path.name


def test_seed_changes_the_graph(small_spec):
    first = generate_kg(small_spec)
    second = generate_kg(replace(small_spec, seed=small_spec.seed + 1))
    assert first.test.triples != second.test.triples


def test_union_training_queries_on_request(small_spec):
    spec = replace(small_spec, train_structures=["1p"], train_union_queries=2, eval_structures=["1p"])
    splits = generate_kg(spec)
    records = generate_queries(splits, spec)
    tags = [r.tag for r in records["train"]]
    assert tags.count("2u") == 2 and tags.count("up") == 2


@pytest.mark.parametrize("overrides", [
    {"train_edges": 241},
    {"n_entities": 3, "n_relations": 1, "train_edges": 10, "valid_edges": 2, "test_edges": 2},
    {"train_edges": 20},
])
def test_infeasible_specs(small_spec, overrides):
    with pytest.raises(GenerationError):
        generate_kg(replace(small_spec, **overrides))


def test_exhausted_budget_names_the_structure():
    kg = build_kg([("a", "r", "b")])
    with pytest.raises(GenerationError, match="2p"):
        sample_queries(kg, "2p", 1, np.random.default_rng(0), cap=10)


def test_graph_without_edges_has_no_targets():
    kg = build_kg([("a", "r", "b")])
    empty = type(kg)(kg.entities, kg.relations, ())
    with pytest.raises(GenerationError):
        sample_queries(empty, "1p", 1, np.random.default_rng(0), cap=10)
