"""
Knowledge graph loading and indexing

Triple files are UTF-8, one `head<TAB>relation<TAB>tail` per line. Ids are
dense, 0-based and assigned in first-appearance order; everything downstream
works on ids, names only show up at I/O edges.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .config import TRIPLE_FILES
from .errors import TripleFormatError, VocabularyError

logger = logging.getLogger(__name__)

Triple = Tuple[int, int, int]


class Vocabulary:
    """Bidirectional name <-> id map, ids in insertion order"""

    def __init__(self, names: Iterable[str] = ()):
        self._names: List[str] = []
        self._index: Dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._index.get(name)
        if idx is None:
            idx = len(self._names)
            self._names.append(name)
            self._index[name] = idx
        return idx

    def id(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise VocabularyError(f"Unknown name {name!r}")

    def name(self, idx: int) -> str:
        if not 0 <= idx < len(self._names):
            raise VocabularyError(f"Id {idx} out of range [0, {len(self._names)})")
        return self._names[idx]

    def __contains__(self, name) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self._names)

    def fingerprint(self) -> str:
        """sha256 over the names in id order"""
        return hashlib.sha256("\n".join(self._names).encode("utf-8")).hexdigest()


@dataclass
class LoadReport:
    lines: int = 0
    triples: int = 0
    duplicates: int = 0


class KnowledgeGraph:
    """
    Entity/relation vocabularies plus the triple set and its (head, relation) index
    Immutable after construction
    """

    def __init__(self, entities: Vocabulary, relations: Vocabulary, triples: Iterable[Triple]):
        self.entities = entities
        self.relations = relations

        ordered: List[Triple] = []
        seen: Set[Triple] = set()
        for h, r, t in triples:
            triple = (int(h), int(r), int(t))
            if triple in seen:
                continue
            self._check_triple(triple)
            seen.add(triple)
            ordered.append(triple)

        self.ordered_triples: Tuple[Triple, ...] = tuple(ordered)
        self.triples: FrozenSet[Triple] = frozenset(seen)

        index: Dict[Tuple[int, int], Set[int]] = {}
        for h, r, t in ordered:
            index.setdefault((h, r), set()).add(t)
        self.out_index: Dict[Tuple[int, int], List[int]] = {key: sorted(tails) for key, tails in index.items()}
        self.report = LoadReport(triples=len(ordered))

    def _check_triple(self, triple: Triple):
        h, r, t = triple
        n, m = len(self.entities), len(self.relations)
        if not (0 <= h < n and 0 <= t < n and 0 <= r < m):
            raise VocabularyError(f"Triple {triple} has ids outside the vocabularies ({n} entities, {m} relations)")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def __len__(self) -> int:
        return len(self.triples)

    @cached_property
    def all_entities(self) -> FrozenSet[int]:
        return frozenset(range(self.n_entities))

    @cached_property
    def in_edges(self) -> Dict[int, List[Tuple[int, int]]]:
        """tail -> sorted list of (relation, head); used for backward query grounding"""
        index: Dict[int, List[Tuple[int, int]]] = {}
        for h, r, t in self.ordered_triples:
            index.setdefault(t, []).append((r, h))
        return {t: sorted(edges) for t, edges in index.items()}

    def check_entity(self, idx: int):
        if not 0 <= idx < self.n_entities:
            raise VocabularyError(f"Entity id {idx} out of range [0, {self.n_entities})")

    def check_relation(self, idx: int):
        if not 0 <= idx < self.n_relations:
            raise VocabularyError(f"Relation id {idx} out of range [0, {self.n_relations})")

    def project_set(self, entities: Iterable[int], relation: int) -> FrozenSet[int]:
        """Union of the out-neighbours of every entity under relation"""
        self.check_relation(relation)
        out: Set[int] = set()
        for h in entities:
            out.update(self.out_index.get((h, relation), ()))
        return frozenset(out)

    def complement_set(self, entities: Iterable[int]) -> FrozenSet[int]:
        """V \\ S"""
        return self.all_entities.difference(entities)

    def save(self, path) -> Path:
        """Write triples in insertion order, LF endings"""
        path = Path(path)
        lines = [
            f"{self.entities.name(h)}\t{self.relations.name(r)}\t{self.entities.name(t)}\n"
            for h, r, t in self.ordered_triples
        ]
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(lines)
        logger.debug(f"Wrote {len(lines)} triples to {path}")
        return path


def _read_triple_lines(path: Path, entities: Vocabulary, relations: Vocabulary, report: LoadReport) -> List[Triple]:
    triples: List[Triple] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            report.lines += 1
            fields = line.split("\t")
            if len(fields) != 3:
                raise TripleFormatError(path, line_no, f"expected 3 tab-separated fields, got {len(fields)}")
            if any(not f for f in fields):
                raise TripleFormatError(path, line_no, "empty field")
            head, rel, tail = fields
            triples.append((entities.add(head), relations.add(rel), entities.add(tail)))
    return triples


def _count_duplicates(triples: Sequence[Triple]) -> int:
    return len(triples) - len(set(triples))


def load_triples(path, entities: Optional[Vocabulary] = None, relations: Optional[Vocabulary] = None) -> KnowledgeGraph:
    """
    Load a single triple file
    Arguments:
        path: TSV triple file
        entities, relations: vocabularies to extend (fresh ones when omitted)
    Returns:
        KnowledgeGraph with .report holding line / triple / duplicate counts
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Triple file {path} does not exist")

    entities = entities if entities is not None else Vocabulary()
    relations = relations if relations is not None else Vocabulary()
    report = LoadReport()
    triples = _read_triple_lines(path, entities, relations, report)

    kg = KnowledgeGraph(entities, relations, triples)
    report.triples = len(kg)
    report.duplicates = _count_duplicates(triples)
    kg.report = report
    logger.info(f"Loaded {path.name}: {len(entities)} entities, {len(relations)} relations, "
                f"{report.triples} triples ({report.duplicates} duplicates dropped)")
    return kg


@dataclass
class GraphSplits:
    """
    Nested graphs: train ⊆ valid (train + valid edges) ⊆ test (all edges)
    All three share one vocabulary pair
    """
    train: KnowledgeGraph
    valid: KnowledgeGraph
    test: KnowledgeGraph
    reports: Dict[str, LoadReport] = field(default_factory=dict)

    def __post_init__(self):
        self.check_nesting()

    def check_nesting(self):
        kgs = (self.train, self.valid, self.test)
        if len({(id(kg.entities), id(kg.relations)) for kg in kgs}) != 1:
            if len({(kg.entities.names, kg.relations.names) for kg in kgs}) != 1:
                raise VocabularyError("Splits must share identical vocabularies")
        if not (self.train.triples <= self.valid.triples <= self.test.triples):
            raise VocabularyError("Split triples are not nested train ⊆ valid ⊆ test")

    def __getitem__(self, which: str) -> KnowledgeGraph:
        if which not in ("train", "valid", "test"):
            raise KeyError(f"Unknown split {which!r}")
        return getattr(self, which)

    def previous(self, which: str) -> KnowledgeGraph:
        """The split whose answers count as 'easy' for `which`"""
        return {"valid": self.train, "test": self.valid}[which]

    @property
    def entities(self) -> Vocabulary:
        return self.test.entities

    @property
    def relations(self) -> Vocabulary:
        return self.test.relations


def build_splits(entities: Vocabulary, relations: Vocabulary, train: Sequence[Triple],
                 valid: Sequence[Triple], test: Sequence[Triple]) -> GraphSplits:
    """Assemble cumulative graphs from the three disjoint edge lists"""
    train_kg = KnowledgeGraph(entities, relations, train)
    valid_kg = KnowledgeGraph(entities, relations, list(train) + list(valid))
    test_kg = KnowledgeGraph(entities, relations, list(train) + list(valid) + list(test))
    return GraphSplits(train_kg, valid_kg, test_kg)


def load_splits(data_dir) -> GraphSplits:
    """
    Load train.txt / valid.txt / test.txt from a dataset directory
    Vocabularies are built across the files in train, valid, test order
    """
    data_dir = Path(data_dir)
    entities, relations = Vocabulary(), Vocabulary()
    edges: Dict[str, List[Triple]] = {}
    reports: Dict[str, LoadReport] = {}

    for which, filename in TRIPLE_FILES.items():
        path = data_dir / filename
        if not path.exists():
            raise FileNotFoundError(f"Missing split file {path}")
        report = LoadReport()
        triples = _read_triple_lines(path, entities, relations, report)
        report.duplicates = _count_duplicates(triples)
        report.triples = len(triples) - report.duplicates
        edges[which] = triples
        reports[which] = report

    splits = build_splits(entities, relations, edges["train"], edges["valid"], edges["test"])
    splits.reports = reports
    logger.info(f"Loaded dataset {data_dir}: {len(entities)} entities, {len(relations)} relations, "
                f"train/valid/test triples {len(splits.train)}/{len(splits.valid)}/{len(splits.test)}")
    return splits


def save_splits(splits: GraphSplits, data_dir) -> Path:
    """Write the three disjoint edge files (valid.txt holds only the new valid edges, etc.)"""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    previous = None
    for which in ("train", "valid", "test"):
        kg = splits[which]
        new_edges = [t for t in kg.ordered_triples if previous is None or t not in previous.triples]
        KnowledgeGraph(kg.entities, kg.relations, new_edges).save(data_dir / TRIPLE_FILES[which])
        previous = kg
    return data_dir
