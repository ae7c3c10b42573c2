"""
Synthetic knowledge graphs and benchmark-style queries with oracle answers
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

import numpy as np

from .config import GEN_SPEC_FILE, NEGATION_STRUCTURES, QUERY_FILES, UNION_STRUCTURES, GenSpec
from .errors import GenerationError
from .kg_store import GraphSplits, KnowledgeGraph, Triple, Vocabulary, build_splits, load_splits, save_splits
from .query_model import (And, Anchor, Not, Or, Proj, QueryNode, QueryRecord, STRUCTURE_TEMPLATES,
                          children_of, classify_structure, oracle_answer, save_records)

logger = logging.getLogger(__name__)

# attempts per requested query before a structure is given up on
ATTEMPTS_PER_QUERY = 200
MIN_ATTEMPTS = 2000


# ---------------------------------------------------------------- graphs

def _names(spec: GenSpec) -> Tuple[Vocabulary, Vocabulary]:
    width = len(str(spec.n_entities - 1))
    entities = Vocabulary(f"ent_{i:0{width}d}" for i in range(spec.n_entities))
    relations = Vocabulary()
    for r in range(spec.n_relations):
        relations.add(f"+rel_{r}")
        relations.add(f"-rel_{r}")
    return entities, relations


def _check_feasible(spec: GenSpec) -> Tuple[int, int, int]:
    counts = {"train": spec.train_edges, "valid": spec.valid_edges, "test": spec.test_edges}
    odd = [name for name, value in counts.items() if value % 2]
    if odd:
        raise GenerationError(f"Edge counts include inverses and must be even: {', '.join(odd)}")
    base = {name: value // 2 for name, value in counts.items()}
    capacity = spec.n_entities * (spec.n_entities - 1) * spec.n_relations
    if sum(base.values()) > capacity:
        raise GenerationError(f"Infeasible spec: {sum(base.values())} forward edges requested, "
                              f"only {capacity} distinct non-loop triples exist")
    if base["train"] < max(spec.n_entities - 1, spec.n_relations):
        raise GenerationError(f"train_edges={spec.train_edges} is too small to touch every entity "
                              f"and relation (need at least {2 * max(spec.n_entities - 1, spec.n_relations)})")
    return base["train"], base["valid"], base["test"]


class _EdgeSampler:
    """Preferential attachment: endpoints drawn with probability proportional to degree + 1"""

    def __init__(self, spec: GenSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.out_degree = np.zeros(spec.n_entities)
        self.in_degree = np.zeros(spec.n_entities)
        self.seen: Set[Tuple[int, int, int]] = set()
        self.budget = 50 * (spec.train_edges + spec.valid_edges + spec.test_edges) + 1000

    def _add(self, h: int, r: int, t: int, out: List[Tuple[int, int, int]]) -> bool:
        if h == t or (h, r, t) in self.seen:
            return False
        self.seen.add((h, r, t))
        self.out_degree[h] += 1
        self.in_degree[t] += 1
        out.append((h, r, t))
        return True

    def backbone(self, out: List[Tuple[int, int, int]]):
        """One edge from every entity to an earlier one, so each entity shows up in train"""
        for i in range(1, self.spec.n_entities):
            j = int(self.rng.integers(0, i))
            r = (i - 1) % self.spec.n_relations
            h, t = (i, j) if self.rng.random() < 0.5 else (j, i)
            self._add(h, r, t, out)

    def fill(self, count: int, out: List[Tuple[int, int, int]], required_relations: Tuple[int, ...] = ()):
        """Add count new edges; the first ones use required_relations in order"""
        added = 0
        while added < count:
            if self.budget <= 0:
                raise GenerationError("Edge sampling budget exhausted; lower the edge counts or raise n_entities")
            self.budget -= 1
            p_out = (self.out_degree + 1) / (self.out_degree + 1).sum()
            p_in = (self.in_degree + 1) / (self.in_degree + 1).sum()
            h = int(self.rng.choice(self.spec.n_entities, p=p_out))
            t = int(self.rng.choice(self.spec.n_entities, p=p_in))
            n_rel = self.spec.n_relations
            r = required_relations[added] if added < len(required_relations) else int(self.rng.integers(0, n_rel))
            if self._add(h, r, t, out):
                added += 1


def _with_inverses(base: List[Tuple[int, int, int]]) -> List[Triple]:
    triples = []
    for h, r, t in base:
        triples.append((h, 2 * r, t))
        triples.append((t, 2 * r + 1, h))
    return triples


def generate_kg(spec: GenSpec, rng: Optional[np.random.Generator] = None) -> GraphSplits:
    """
    Random multi-relational graph with degree skew, materialized inverse relations
    and nested train / valid / test splits holding exactly the requested triple counts
    """
    spec.validate()
    n_train, n_valid, n_test = _check_feasible(spec)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[0])

    sampler = _EdgeSampler(spec, rng)
    train: List[Tuple[int, int, int]] = []
    sampler.backbone(train)
    # relations the backbone didn't reach
    missing = tuple(range(len(train), spec.n_relations))
    sampler.fill(n_train - len(train), train, required_relations=missing)
    valid: List[Tuple[int, int, int]] = []
    sampler.fill(n_valid, valid)
    test: List[Tuple[int, int, int]] = []
    sampler.fill(n_test, test)

    entities, relations = _names(spec)
    splits = build_splits(entities, relations, _with_inverses(train), _with_inverses(valid), _with_inverses(test))
    degrees = sampler.out_degree
    logger.info(f"Generated graph: {spec.n_entities} entities, {2 * spec.n_relations} relations, "
                f"{len(splits.train)}/{len(splits.valid)}/{len(splits.test)} triples, "
                f"max out-degree {int(degrees.max())}")
    return splits


# ---------------------------------------------------------------- queries

@dataclass
class _Grounding:
    """Context for grounding one template against one graph"""
    kg: KnowledgeGraph
    rng: np.random.Generator
    targets: np.ndarray                 # entities with at least one in-edge
    new_in_edges: Optional[Dict[int, List[Tuple[int, int]]]] = None

    def random_target(self) -> int:
        return int(self.rng.choice(self.targets))

    def pick_edge(self, target: int, prefer_new: bool) -> Optional[Tuple[int, int]]:
        if prefer_new and self.new_in_edges and target in self.new_in_edges:
            edges = self.new_in_edges[target]
        else:
            edges = self.kg.in_edges.get(target)
        if not edges:
            return None
        return edges[int(self.rng.integers(0, len(edges)))]


def _ground(template: QueryNode, target: int, ctx: _Grounding, prefer_new: bool) -> Optional[QueryNode]:
    """
    Instantiate template so that target is one of its answers (walking edges backwards)
    Negated branches are grounded on a random other target
    """
    if isinstance(template, Anchor):
        return Anchor(target)
    if isinstance(template, Proj):
        edge = ctx.pick_edge(target, prefer_new)
        if edge is None:
            return None
        relation, head = edge
        child = _ground(template.child, head, ctx, prefer_new=False)
        return None if child is None else Proj(relation, child)
    if isinstance(template, Not):
        inner = _ground(template.child, ctx.random_target(), ctx, prefer_new=False)
        return None if inner is None else Not(inner)

    # the first non-negated branch carries the target (and the new-edge preference)
    lead = next(i for i, c in enumerate(template.children) if not isinstance(c, Not))
    children = []
    for i, child in enumerate(template.children):
        if isinstance(template, Or) and i != lead:
            grounded = _ground(child, ctx.random_target(), ctx, prefer_new=False)
        else:
            grounded = _ground(child, target, ctx, prefer_new and i == lead)
        if grounded is None:
            return None
        children.append(grounded)
    return type(template)(tuple(children))


def _acceptable(q: QueryNode, answers: FrozenSet[int], tag: str, kg: KnowledgeGraph, cap: int) -> bool:
    if not answers or len(answers) > cap:
        return False
    if classify_structure(q) != tag:
        return False
    stack = [q]
    while stack:
        node = stack.pop()
        if isinstance(node, (And, Or)) and len(set(node.children)) != len(node.children):
            return False
        if isinstance(node, Not):
            inner = oracle_answer(kg, node.child)
            if not inner or len(inner) == kg.n_entities:
                return False
        stack.extend(children_of(node))
    return True


def sample_queries(kg: KnowledgeGraph, tag: str, count: int, rng: np.random.Generator, cap: int,
                   previous: Optional[KnowledgeGraph] = None) -> List[QueryRecord]:
    """
    Rejection-sample `count` distinct queries of one structure
    Arguments:
        kg: governing graph (answers are computed on it)
        tag: structure tag
        count: number of records wanted
        rng: generator
        cap: maximum answer-set size
        previous: for evaluation splits, the previous graph; records then keep only
                  queries with at least one answer not already on it
    Returns:
        list of QueryRecord
    """
    if count <= 0:
        return []
    template = STRUCTURE_TEMPLATES[tag]
    new_in_edges = None
    if previous is not None:
        new_in_edges = {}
        for h, r, t in kg.ordered_triples:
            if (h, r, t) not in previous.triples:
                new_in_edges.setdefault(t, []).append((r, h))
        targets = np.array(sorted(new_in_edges), dtype=np.int64)
    else:
        targets = np.array(sorted(kg.in_edges), dtype=np.int64)
    if targets.size == 0:
        raise GenerationError(f"No candidate targets for structure {tag}")

    ctx = _Grounding(kg, rng, np.array(sorted(kg.in_edges), dtype=np.int64), new_in_edges)
    records: List[QueryRecord] = []
    seen: Set[QueryNode] = set()
    budget = max(MIN_ATTEMPTS, ATTEMPTS_PER_QUERY * count)
    attempts = 0
    while len(records) < count:
        if attempts >= budget:
            raise GenerationError(f"Sampling budget exhausted for structure {tag}: "
                                  f"{len(records)}/{count} queries after {attempts} attempts")
        attempts += 1
        target = int(rng.choice(targets))
        q = _ground(template, target, ctx, prefer_new=previous is not None)
        if q is None or q in seen:
            continue
        answers = oracle_answer(kg, q)
        if not _acceptable(q, answers, tag, kg, cap):
            continue
        if previous is None:
            record = QueryRecord(tag, q, frozenset(), answers)
        else:
            easy = oracle_answer(previous, q) & answers
            hard = answers - easy
            if not hard:
                continue
            record = QueryRecord(tag, q, easy, hard)
        seen.add(q)
        records.append(record)

    logger.debug(f"{tag}: {count} queries in {attempts} attempts")
    return records


def _train_counts(spec: GenSpec) -> Dict[str, int]:
    counts = {}
    for tag in spec.train_structures:
        if tag in NEGATION_STRUCTURES:
            counts[tag] = int(round(spec.negation_ratio * spec.train_queries))
        else:
            counts[tag] = spec.train_queries
    if spec.train_union_queries:
        for tag in UNION_STRUCTURES:
            counts[tag] = spec.train_union_queries
    return counts


def generate_queries(splits: GraphSplits, spec: GenSpec,
                     rng: Optional[np.random.Generator] = None) -> Dict[str, List[QueryRecord]]:
    """
    Query records for every split
    train: answers on the train graph (answers_easy empty)
    valid / test: answers_easy from the previous split, answers_hard the new ones only
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[1])

    out: Dict[str, List[QueryRecord]] = {"train": []}
    for tag, count in _train_counts(spec).items():
        out["train"].extend(sample_queries(splits.train, tag, count, rng, spec.answer_cap))
    for which in ("valid", "test"):
        out[which] = []
        for tag in spec.eval_structures:
            out[which].extend(sample_queries(splits[which], tag, spec.eval_queries, rng, spec.answer_cap,
                                             previous=splits.previous(which)))
    logger.info(f"Generated queries: train {len(out['train'])}, valid {len(out['valid'])}, test {len(out['test'])}")
    return out


def generate_dataset(spec: GenSpec, out_dir) -> Tuple[GraphSplits, Dict[str, List[QueryRecord]]]:
    """
    Write a complete dataset directory: triple files, query files and spec.json
    Queries are generated over the re-loaded files so their ids match any loader's ids
    """
    out_dir = Path(out_dir)
    kg_rng, query_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2))

    save_splits(generate_kg(spec, kg_rng), out_dir)
    (out_dir / GEN_SPEC_FILE).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    splits = load_splits(out_dir)
    records = generate_queries(splits, spec, query_rng)
    for which, filename in QUERY_FILES.items():
        save_records(records[which], out_dir / filename, splits[which])
    return splits, records
