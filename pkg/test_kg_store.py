"""
Tests for triple loading, vocabularies and split nesting
"""
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import TOY_TRIPLES, build_kg
from modules.config import GenSpec
from modules.dataset_gen import generate_kg
from modules.errors import TripleFormatError, VocabularyError
from modules.kg_store import (
    KnowledgeGraph, Vocabulary, build_splits, load_splits, load_triples, save_splits,
)


def _write(path, lines):
    path.write_text("".join(lines), encoding="utf-8")
    return path


def test_vocabulary_assigns_ids_in_first_appearance_order():
    vocab = Vocabulary(["b", "a", "b", "c"])
    assert vocab.names == ("b", "a", "c")
    assert vocab.id("c") == 2
    assert vocab.name(1) == "a"
    with pytest.raises(VocabularyError):
        vocab.id("missing")
    with pytest.raises(VocabularyError):
        vocab.name(3)


def test_fingerprint_depends_on_order():
    assert Vocabulary(["a", "b"]).fingerprint() != Vocabulary(["b", "a"]).fingerprint()
    assert Vocabulary(["a", "b"]).fingerprint() == Vocabulary(["a", "b"]).fingerprint()


def test_load_triples_reports_duplicates(tmp_path):
    path = _write(tmp_path / "kg.txt", ["a\tr\tb\n", "a\tr\tb\n", "\n", "b\ts\tc\n"])
    kg = load_triples(path)
    assert len(kg) == 2
    assert kg.report.lines == 3
    assert kg.report.duplicates == 1
    assert kg.entities.names == ("a", "b", "c")


@pytest.mark.parametrize("line", ["a\tr\n", "a\tr\tb\tc\n", "a\t\tb\n"])
def test_malformed_lines_name_the_line(tmp_path, line):
    path = _write(tmp_path / "bad.txt", ["x\ty\tz\n", line])
    with pytest.raises(TripleFormatError) as err:
        load_triples(path)
    assert err.value.line_no == 2


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_triples(tmp_path / "nope.txt")


def test_projection_and_complement(toy_kg):
    usa, christianity, hinduism, sunny, india = range(5)
    religion = toy_kg.relations.id("Religion")
    assert toy_kg.project_set({usa}, religion) == {christianity, hinduism}
    assert toy_kg.project_set({sunny, india}, religion) == {hinduism}
    assert toy_kg.project_set(set(), religion) == frozenset()
    assert toy_kg.complement_set({usa, india}) == {christianity, hinduism, sunny}
    with pytest.raises(VocabularyError):
        toy_kg.project_set({usa}, 99)


def test_in_edges_index(toy_kg):
    hinduism = toy_kg.entities.id("Hinduism")
    religion = toy_kg.relations.id("Religion")
    heads = {h for r, h in toy_kg.in_edges[hinduism] if r == religion}
    assert heads == {toy_kg.entities.id(n) for n in ("USA", "SunnyDeol", "India")}


def test_ids_outside_vocabulary_are_rejected():
    with pytest.raises(VocabularyError):
        KnowledgeGraph(Vocabulary(["a"]), Vocabulary(["r"]), [(0, 0, 1)])


def test_save_and_reload_keeps_ids(tmp_path, toy_kg):
    path = toy_kg.save(tmp_path / "toy.txt")
    assert path.read_bytes().count(b"\r") == 0
    again = load_triples(path)
    assert again.entities.names == toy_kg.entities.names
    assert again.triples == toy_kg.triples


def test_splits_are_nested_and_share_vocabularies(tmp_path):
    kg = build_kg(TOY_TRIPLES)
    triples = list(kg.ordered_triples)
    splits = build_splits(kg.entities, kg.relations, triples[:5], triples[5:7], triples[7:])
    assert splits.train.triples < splits.valid.triples < splits.test.triples
    assert splits.previous("test") is splits.valid

    data_dir = save_splits(splits, tmp_path / "data")
    assert len((data_dir / "valid.txt").read_text(encoding="utf-8").splitlines()) == 2
    loaded = load_splits(data_dir)
    assert loaded.test.triples == splits.test.triples
    assert loaded.train.entities is loaded.test.entities
    assert loaded.reports["train"].triples == 5


def test_unknown_split_name(toy_kg):
    splits = build_splits(toy_kg.entities, toy_kg.relations, toy_kg.ordered_triples, [], [])
    with pytest.raises(KeyError):
        splits["dev"]


def test_missing_split_file(tmp_path):
    _write(tmp_path / "train.txt", ["a\tr\tb\n"])
    with pytest.raises(FileNotFoundError):
        load_splits(tmp_path)


TOY = build_kg(TOY_TRIPLES)
toy_sets = st.sets(st.integers(0, TOY.n_entities - 1))


@given(toy_sets, toy_sets, st.integers(0, TOY.n_relations - 1))
def test_projection_is_monotone(smaller, extra, relation):
    assert TOY.project_set(smaller, relation) <= TOY.project_set(smaller | extra, relation)


@given(toy_sets)
def test_complement_is_an_involution(entities):
    once = TOY.complement_set(entities)
    assert not once & entities
    assert TOY.complement_set(once) == frozenset(entities)


def test_generated_graph_survives_save_and_reload(tmp_path):
    splits = generate_kg(GenSpec(seed=3))
    assert splits.test.n_entities == 200
    first = splits.test.save(tmp_path / "first.txt")
    again = load_triples(first)
    second = again.save(tmp_path / "second.txt")
    assert second.read_bytes() == first.read_bytes()

    def named(kg):
        return {(kg.entities.name(h), kg.relations.name(r), kg.entities.name(t)) for h, r, t in kg.triples}

    assert named(again) == named(splits.test)
