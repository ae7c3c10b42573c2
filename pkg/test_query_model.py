"""
Tests for the query DSL, DNF rewriting, structure catalog and the set oracle
"""
import pytest

from conftest import build_kg
from modules.config import ALL_STRUCTURES, NEGATION_STRUCTURES
from modules.errors import DnfLimitError, QuerySyntaxError, UnsupportedQueryError, VocabularyError
from modules.query_model import (
    STRUCTURE_TEMPLATES, And, Anchor, Not, Or, Proj, QueryRecord, classify_structure, contains_or,
    dnf_oracle_answer, format_query, iter_nodes, load_records, oracle_answer, parse_query, save_records,
    shape_signature, to_dnf, validate,
)

USA, CHRISTIANITY, HINDUISM, SUNNY, INDIA = range(5)
RELIGION, CITIZEN, INV_RELIGION = range(3)


def test_parse_and_format_canonical_text(toy_kg):
    text = "AND(P(r:Religion, e:USA), NOT(P(r:Religion, e:India)))"
    q = parse_query(text, toy_kg)
    assert q == And((Proj(RELIGION, Anchor(USA)), Not(Proj(RELIGION, Anchor(INDIA)))))
    assert format_query(q, toy_kg) == text


def test_whitespace_between_tokens_is_ignored(toy_kg):
    q = parse_query("  OR( P( r:Religion ,e:USA ) ,e:India )  ", toy_kg)
    assert q == Or((Proj(RELIGION, Anchor(USA)), Anchor(INDIA)))


@pytest.mark.parametrize("text,offset", [
    ("P(r:Religion e:USA)", 13),
    ("AND(e:USA)", 0),
    ("X(e:USA)", 0),
    ("e:USA)", 5),
    ("P(r:Religion, e:USA", 19),
])
def test_syntax_errors_carry_offsets(toy_kg, text, offset):
    with pytest.raises(QuerySyntaxError) as err:
        parse_query(text, toy_kg)
    assert err.value.offset == offset



def test_syntax_error_offsets_count_utf8_bytes():
    kg = build_kg([("Zürich", "in", "Schweiz")])
    text = "P(r:in, e:Zürich"
    with pytest.raises(QuerySyntaxError) as err:
        parse_query(text, kg)
    assert len(text) == 16
    assert err.value.offset == 17

def test_unknown_names(toy_kg):
    with pytest.raises(VocabularyError):
        parse_query("P(r:Religion, e:Mars)", toy_kg)
    with pytest.raises(VocabularyError):
        parse_query("P(r:Capital, e:USA)", toy_kg)


def test_unsupported_fragment(toy_kg):
    with pytest.raises(UnsupportedQueryError):
        parse_query("NOT(P(r:Religion, e:USA))", toy_kg)
    with pytest.raises(UnsupportedQueryError):
        parse_query("AND(e:USA, NOT(OR(e:USA, e:India)))", toy_kg)
    with pytest.raises(UnsupportedQueryError):
        validate(And((Anchor(USA),)))


def test_oracle_on_toy_graph(toy_kg):
    religions_of_usa = Proj(RELIGION, Anchor(USA))
    assert oracle_answer(toy_kg, religions_of_usa) == {CHRISTIANITY, HINDUISM}

    # Hinduism followers that are not SunnyDeol's country
    q = And((Proj(INV_RELIGION, Anchor(HINDUISM)), Not(Proj(CITIZEN, Anchor(SUNNY)))))
    assert oracle_answer(toy_kg, q) == {USA, SUNNY}

    two_hop = Proj(INV_RELIGION, Proj(RELIGION, Anchor(USA)))
    assert oracle_answer(toy_kg, two_hop) == {USA, SUNNY, INDIA}

    union = Or((Proj(CITIZEN, Anchor(SUNNY)), Proj(RELIGION, Anchor(INDIA))))
    assert oracle_answer(toy_kg, union) == {INDIA, HINDUISM}


def test_answers_only_grow_from_train_to_test(small_dataset):
    _, splits, records = small_dataset
    checked = 0
    for record in (r for which in ("train", "valid", "test") for r in records[which]):
        if record.tag in NEGATION_STRUCTURES:
            continue
        train, valid, test = (oracle_answer(splits[which], record.query) for which in ("train", "valid", "test"))
        assert train <= valid <= test, format_query(record.query, splits.test)
        checked += 1
    assert checked > 0


def test_dnf_distributes_or_over_and_and_projection(toy_kg):
    a, b, c = Proj(RELIGION, Anchor(USA)), Proj(RELIGION, Anchor(INDIA)), Proj(CITIZEN, Anchor(SUNNY))
    q = Proj(INV_RELIGION, And((Or((a, b)), c)))
    disjuncts = to_dnf(q)
    assert disjuncts == [Proj(INV_RELIGION, And((a, c))), Proj(INV_RELIGION, And((b, c)))]
    assert not any(contains_or(d) for d in disjuncts)


def test_dnf_keeps_or_free_queries():
    q = And((Proj(RELIGION, Anchor(USA)), Not(Proj(RELIGION, Anchor(INDIA)))))
    assert to_dnf(q) == [q]


def test_dnf_limit():
    leaf = Or((Anchor(0), Anchor(1)))
    q = And(tuple(leaf for _ in range(7)))
    with pytest.raises(DnfLimitError):
        to_dnf(q)
    assert len(to_dnf(And(tuple(leaf for _ in range(6))))) == 64


@pytest.mark.parametrize("text", [
    "OR(P(r:Religion, e:USA), P(r:Religion, e:India))",
    "P(r:-Religion, OR(P(r:Religion, e:USA), P(r:Citizen, e:SunnyDeol)))",
    "AND(OR(e:USA, e:India), P(r:Religion, e:SunnyDeol), NOT(P(r:Religion, e:India)))",
])
def test_dnf_preserves_answers(toy_kg, text):
    q = parse_query(text, toy_kg)
    assert dnf_oracle_answer(toy_kg, q) == oracle_answer(toy_kg, q)


def test_every_template_classifies_to_its_tag():
    assert sorted(STRUCTURE_TEMPLATES) == sorted(ALL_STRUCTURES)
    for tag, template in STRUCTURE_TEMPLATES.items():
        assert classify_structure(template) == tag


def test_classification_ignores_child_order_and_ids():
    q = And((Proj(1, Anchor(4)), Not(Proj(2, Anchor(3)))))
    assert classify_structure(q) == "2in"
    assert classify_structure(And((q.children[1], q.children[0]))) == "2in"
    assert classify_structure(And((Proj(1, Anchor(0)), Anchor(2)))) == "other"
    assert shape_signature(q, normalize=False) != shape_signature(q)


def test_iter_nodes_is_post_order():
    q = And((Proj(0, Anchor(1)), Not(Proj(0, Anchor(2)))))
    paths = [path for path, _ in iter_nodes(q)]
    assert paths == ["root.0.0", "root.0", "root.1.0.0", "root.1.0", "root.1", "root"]


def test_records_round_trip_through_jsonl(tmp_path, toy_kg):
    record = QueryRecord("1p", Proj(RELIGION, Anchor(USA)), frozenset({CHRISTIANITY}), frozenset({HINDUISM}))
    path = save_records([record], tmp_path / "q.jsonl", toy_kg)
    assert load_records(path, toy_kg) == [record]


def test_record_answer_sets_must_be_disjoint():
    with pytest.raises(ValueError):
        QueryRecord("1p", Proj(0, Anchor(0)), frozenset({1}), frozenset({1, 2}))
