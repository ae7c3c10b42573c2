"""
FOL query AST, the query DSL, DNF rewriting, structure catalog and the set-semantics oracle

Grammar:
    node   := anchor | proj | and | or | not
    anchor := "e:" NAME
    proj   := "P(" "r:" NAME "," node ")"
    and    := "AND(" node ("," node)+ ")"
    or     := "OR("  node ("," node)+ ")"
    not    := "NOT(" node ")"
    NAME   := [^,() ]+      whitespace between tokens is ignored
"""
import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, Iterable, List, Optional, Tuple, Union

from .config import ALL_STRUCTURES, MAX_DNF_DISJUNCTS, QUERY_FILES
from .errors import DnfLimitError, QuerySyntaxError, UnsupportedQueryError, VocabularyError
from .kg_store import KnowledgeGraph, Vocabulary

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Anchor:
    entity: int


@dataclass(frozen=True)
class Proj:
    relation: int
    child: "QueryNode"


@dataclass(frozen=True)
class And:
    children: Tuple["QueryNode", ...]


@dataclass(frozen=True)
class Or:
    children: Tuple["QueryNode", ...]


@dataclass(frozen=True)
class Not:
    child: "QueryNode"


QueryNode = Union[Anchor, Proj, And, Or, Not]


def children_of(q: QueryNode) -> Tuple[QueryNode, ...]:
    if isinstance(q, (Proj, Not)):
        return (q.child,)
    if isinstance(q, (And, Or)):
        return q.children
    return ()


def contains_or(q: QueryNode) -> bool:
    return isinstance(q, Or) or any(contains_or(c) for c in children_of(q))


def iter_nodes(q: QueryNode, path: str = "root"):
    """Post-order walk yielding (path, node); children are path.0, path.1, ..."""
    for i, child in enumerate(children_of(q)):
        yield from iter_nodes(child, f"{path}.{i}")
    yield path, q


def node_kind(q: QueryNode) -> str:
    return {Anchor: "anchor", Proj: "projection", And: "intersection", Or: "union", Not: "negation"}[type(q)]


def validate(q: QueryNode) -> QueryNode:
    """
    Check the supported fragment: And/Or arity >= 2, no Not at the root, no Or beneath a Not
    Returns q so calls can be chained
    """
    if isinstance(q, Not):
        raise UnsupportedQueryError("negation at the query root is not supported")
    _validate(q, under_not=False)
    return q


def _validate(q: QueryNode, under_not: bool):
    if isinstance(q, (And, Or)) and len(q.children) < 2:
        raise UnsupportedQueryError(f"{type(q).__name__.upper()} needs at least 2 children")
    if isinstance(q, Or) and under_not:
        raise UnsupportedQueryError("OR beneath NOT is outside the supported fragment")
    for child in children_of(q):
        _validate(child, under_not or isinstance(q, Not))


# ---------------------------------------------------------------- parsing

class _Parser:
    """Recursive descent over the raw text; error offsets count UTF-8 bytes"""

    def __init__(self, text: str, entities: Vocabulary, relations: Vocabulary):
        self.text = text
        self.pos = 0
        self.entities = entities
        self.relations = relations

    def byte_offset(self, pos: int) -> int:
        return len(self.text[:pos].encode("utf-8"))

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self, token: str) -> bool:
        self.skip_ws()
        return self.text.startswith(token, self.pos)

    def expect(self, token: str):
        self.skip_ws()
        if not self.text.startswith(token, self.pos):
            found = self.text[self.pos:self.pos + len(token)] or "end of input"
            raise QuerySyntaxError(f"expected {token!r}, found {found!r}", self.byte_offset(self.pos))
        self.pos += len(token)

    def name(self) -> Tuple[str, int]:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in ",()" and not self.text[self.pos].isspace():
            self.pos += 1
        if self.pos == start:
            raise QuerySyntaxError("expected a name", self.byte_offset(start))
        return self.text[start:self.pos], self.byte_offset(start)

    def node(self) -> QueryNode:
        self.skip_ws()
        if self.peek("e:"):
            self.expect("e:")
            name, offset = self.name()
            return Anchor(self._lookup(self.entities, name, "entity", offset))
        if self.peek("P("):
            self.expect("P(")
            self.expect("r:")
            name, offset = self.name()
            relation = self._lookup(self.relations, name, "relation", offset)
            self.expect(",")
            child = self.node()
            self.expect(")")
            return Proj(relation, child)
        for keyword, cls in (("AND(", And), ("OR(", Or)):
            if self.peek(keyword):
                start = self.pos
                self.expect(keyword)
                children = [self.node()]
                while self.peek(","):
                    self.expect(",")
                    children.append(self.node())
                self.expect(")")
                if len(children) < 2:
                    raise QuerySyntaxError(f"{keyword[:-1]} needs at least 2 arguments", self.byte_offset(start))
                return cls(tuple(children))
        if self.peek("NOT("):
            self.expect("NOT(")
            child = self.node()
            self.expect(")")
            return Not(child)
        found = self.text[self.pos:self.pos + 8] or "end of input"
        raise QuerySyntaxError(f"expected a query node, found {found!r}", self.byte_offset(self.pos))

    @staticmethod
    def _lookup(vocab: Vocabulary, name: str, what: str, offset: int) -> int:
        if name not in vocab:
            raise VocabularyError(f"Unknown {what} {name!r} at offset {offset}")
        return vocab.id(name)


def parse_query(text: str, kg: KnowledgeGraph) -> QueryNode:
    """
    Parse DSL text into a validated AST with names resolved against kg's vocabularies
    Arguments:
        text: query in the DSL
        kg: any graph carrying the entity / relation vocabularies
    Returns:
        QueryNode
    """
    parser = _Parser(text, kg.entities, kg.relations)
    q = parser.node()
    parser.skip_ws()
    if parser.pos != len(text):
        raise QuerySyntaxError("trailing input", parser.byte_offset(parser.pos))
    return validate(q)


def format_query(q: QueryNode, kg: KnowledgeGraph) -> str:
    """Canonical DSL text: ', ' between arguments, no other whitespace"""
    if isinstance(q, Anchor):
        return f"e:{kg.entities.name(q.entity)}"
    if isinstance(q, Proj):
        return f"P(r:{kg.relations.name(q.relation)}, {format_query(q.child, kg)})"
    if isinstance(q, Not):
        return f"NOT({format_query(q.child, kg)})"
    keyword = "AND" if isinstance(q, And) else "OR"
    return f"{keyword}({', '.join(format_query(c, kg) for c in q.children)})"


# ---------------------------------------------------------------- DNF

def to_dnf(q: QueryNode, limit: int = MAX_DNF_DISJUNCTS) -> List[QueryNode]:
    """
    Rewrite q as a union of Or-free queries
    Or is lifted over And (distribution) and over Proj, since projection is a union over its input set
    """
    validate(q)
    disjuncts = _dnf(q, limit)
    logger.debug(f"DNF produced {len(disjuncts)} disjuncts")
    return disjuncts


def _dnf(q: QueryNode, limit: int) -> List[QueryNode]:
    if isinstance(q, Anchor):
        return [q]
    if isinstance(q, Proj):
        return [Proj(q.relation, d) for d in _dnf(q.child, limit)]
    if isinstance(q, Not):
        inner = _dnf(q.child, limit)
        if len(inner) != 1:
            raise UnsupportedQueryError("OR beneath NOT is outside the supported fragment")
        return [Not(inner[0])]
    if isinstance(q, Or):
        out = [d for child in q.children for d in _dnf(child, limit)]
    else:
        parts = [_dnf(child, limit) for child in q.children]
        total = 1
        for p in parts:
            total *= len(p)
        if total > limit:
            raise DnfLimitError(f"DNF would produce {total} disjuncts (limit {limit})")
        out = [And(tuple(combo)) for combo in itertools.product(*parts)]
    if len(out) > limit:
        raise DnfLimitError(f"DNF would produce {len(out)} disjuncts (limit {limit})")
    return out


# ---------------------------------------------------------------- structures

def shape_signature(q: QueryNode, normalize: bool = True) -> str:
    """Id-free shape string; normalize sorts And/Or children (their order carries no meaning)"""
    if isinstance(q, Anchor):
        return "e"
    if isinstance(q, Proj):
        return f"p({shape_signature(q.child, normalize)})"
    if isinstance(q, Not):
        return f"n({shape_signature(q.child, normalize)})"
    parts = [shape_signature(c, normalize) for c in q.children]
    if normalize:
        parts.sort()
    return f"{'i' if isinstance(q, And) else 'u'}({','.join(parts)})"


def _p(child: QueryNode) -> Proj:
    return Proj(0, child)


_E = Anchor(0)

# Canonical templates; ids are placeholders, only the shape matters
STRUCTURE_TEMPLATES = {
    "1p": _p(_E),
    "2p": _p(_p(_E)),
    "3p": _p(_p(_p(_E))),
    "2i": And((_p(_E), _p(_E))),
    "3i": And((_p(_E), _p(_E), _p(_E))),
    "ip": _p(And((_p(_E), _p(_E)))),
    "pi": And((_p(_p(_E)), _p(_E))),
    "2u": Or((_p(_E), _p(_E))),
    "up": _p(Or((_p(_E), _p(_E)))),
    "2in": And((_p(_E), Not(_p(_E)))),
    "3in": And((_p(_E), _p(_E), Not(_p(_E)))),
    "inp": _p(And((_p(_E), Not(_p(_E))))),
    "pin": And((_p(_p(_E)), Not(_p(_E)))),
    "pni": And((Not(_p(_p(_E))), _p(_E))),
}

_SIGNATURE_TO_TAG = {shape_signature(t): tag for tag, t in STRUCTURE_TEMPLATES.items()}
assert len(_SIGNATURE_TO_TAG) == len(ALL_STRUCTURES)


def classify_structure(q: QueryNode) -> str:
    """Structure tag of q, or 'other' for shapes outside the catalog"""
    return _SIGNATURE_TO_TAG.get(shape_signature(q), "other")


# ---------------------------------------------------------------- oracle

def oracle_answer(kg: KnowledgeGraph, q: QueryNode) -> FrozenSet[int]:
    """Exact answer set by recursive set evaluation over kg"""
    if isinstance(q, Anchor):
        kg.check_entity(q.entity)
        return frozenset((q.entity,))
    if isinstance(q, Proj):
        return kg.project_set(oracle_answer(kg, q.child), q.relation)
    if isinstance(q, Not):
        return kg.complement_set(oracle_answer(kg, q.child))
    sets = [oracle_answer(kg, c) for c in q.children]
    if isinstance(q, And):
        return frozenset.intersection(*sets)
    return frozenset.union(*sets)


def dnf_oracle_answer(kg: KnowledgeGraph, q: QueryNode) -> FrozenSet[int]:
    return frozenset().union(*(oracle_answer(kg, d) for d in to_dnf(q)))


# ---------------------------------------------------------------- records

@dataclass(frozen=True)
class QueryRecord:
    """
    One dataset query with its answers
    answers_easy: answers already on the previous split; answers_hard: new answers only
    """
    tag: str
    query: QueryNode
    answers_easy: FrozenSet[int]
    answers_hard: FrozenSet[int]

    def __post_init__(self):
        if self.answers_easy & self.answers_hard:
            raise ValueError("answers_hard and answers_easy must be disjoint")

    @property
    def answers(self) -> FrozenSet[int]:
        return self.answers_easy | self.answers_hard

    def to_json(self, kg: KnowledgeGraph) -> str:
        return json.dumps({
            "tag": self.tag,
            "query": format_query(self.query, kg),
            "answers_easy": sorted(self.answers_easy),
            "answers_hard": sorted(self.answers_hard),
        })

    @classmethod
    def from_json(cls, line: str, kg: KnowledgeGraph) -> "QueryRecord":
        data = json.loads(line)
        return cls(
            tag=data["tag"],
            query=parse_query(data["query"], kg),
            answers_easy=frozenset(int(a) for a in data["answers_easy"]),
            answers_hard=frozenset(int(a) for a in data["answers_hard"]),
        )


def save_records(records: Iterable[QueryRecord], path, kg: KnowledgeGraph) -> Path:
    path = Path(path)
    lines = [r.to_json(kg) + "\n" for r in records]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)
    logger.info(f"Wrote {len(lines)} query records to {path}")
    return path


def load_records(path, kg: KnowledgeGraph) -> List[QueryRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Query file {path} does not exist")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(QueryRecord.from_json(line, kg))
            except (KeyError, ValueError) as e:
                logger.error(f"Bad query record at {path}:{line_no}: {e}")
                raise
    logger.info(f"Loaded {len(records)} query records from {path.name}")
    return records


def find_query_file(data_dir, which: str) -> Optional[Path]:
    path = Path(data_dir) / QUERY_FILES[which]
    return path if path.exists() else None
