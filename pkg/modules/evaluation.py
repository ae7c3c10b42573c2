"""
Filtered ranking, MRR / Hits@K aggregation, multi-seed summaries and intermediate-answer tracing
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .autodiff import Tape
from .config import HITS_AT, ModelConfig
from .embeddings import FeatureLogicEmbedding, ModelParams
from .errors import ConfigError
from .kg_store import GraphSplits, KnowledgeGraph
from .operators import embed_query
from .query_model import QueryNode, QueryRecord, contains_or, iter_nodes, node_kind, oracle_answer, to_dnf
from .training import disjunctive_distance, train

logger = logging.getLogger(__name__)

METRICS = ["mrr"] + [f"hits@{k}" for k in HITS_AT]


# ---------------------------------------------------------------- distances

def entity_distances(model: ModelParams, features: np.ndarray, logic: Optional[np.ndarray]) -> np.ndarray:
    """Distance from one query embedding (feature row, logic row) to every entity"""
    table = model.entity_features.value
    distances = np.abs(table - features).sum(axis=1)
    if logic is not None:
        uncertainty = float(logic.sum())
        if model.config.logic_reduction == "mean":
            uncertainty /= model.config.dim
        distances = distances + uncertainty
    return distances


def _embedding_distances(model: ModelParams, V: FeatureLogicEmbedding, row: int = 0) -> np.ndarray:
    logic = V.logic.value[row] if V.logic is not None else None
    return entity_distances(model, V.features.value[row], logic)


def query_distances(model: ModelParams, q: QueryNode) -> np.ndarray:
    """
    (n_entities,) distances for one query
    Or-queries are answered through their DNF unless the model trains the union operator
    """
    if contains_or(q) and not model.config.trainable_union:
        per_disjunct = [_embedding_distances(model, embed_query(model, Tape(), [d])) for d in to_dnf(q)]
        return disjunctive_distance(per_disjunct, model.config.dnf_aggregator)
    return _embedding_distances(model, embed_query(model, Tape(), [q]))


# ---------------------------------------------------------------- ranking

def filtered_ranks(distances: np.ndarray, answers: Sequence[int], filtered: Sequence[int]) -> List[int]:
    """
    Rank of each answer against the entities outside `filtered`
    Ties count against the answer: rank = 1 + |{u not filtered : d(u) <= d(v)}|
    """
    keep = np.ones(distances.shape[0], dtype=bool)
    keep[list(filtered)] = False
    negatives = np.sort(distances[keep])
    return [int(1 + np.searchsorted(negatives, distances[v], side="right")) for v in answers]


def rank_answers(model: ModelParams, record: QueryRecord, kg: KnowledgeGraph) -> List[Tuple[int, int]]:
    """
    Filtered ranks of the record's hard answers
    Arguments:
        model: trained parameters
        record: query with easy / hard answers
        kg: the graph the record was evaluated on; every answer on it is filtered out
    Returns:
        sorted list of (answer id, rank); empty when the record has no hard answers
    """
    if not record.answers_hard:
        logger.info(f"Skipping {record.tag} query with no hard answers")
        return []
    filtered = oracle_answer(kg, record.query) | record.answers_easy | record.answers_hard
    answers = sorted(record.answers_hard)
    ranks = filtered_ranks(query_distances(model, record.query), answers, sorted(filtered))
    return list(zip(answers, ranks))


# ---------------------------------------------------------------- aggregation

def query_metrics(ranks: Sequence[int]) -> Dict[str, float]:
    """MRR and Hits@K averaged over one query's answers"""
    ranks = np.asarray(ranks, dtype=np.float64)
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for k in HITS_AT:
        out[f"hits@{k}"] = float(np.mean(ranks <= k))
    return out


@dataclass
class RankingReport:
    """
    Per-structure ranks and metrics
    ranks[tag] holds one list of answer ranks per evaluated query
    """
    ranks: Dict[str, List[List[int]]] = field(default_factory=dict)
    skipped: int = 0

    def add(self, tag: str, ranks: Sequence[int]):
        self.ranks.setdefault(tag, []).append([int(r) for r in ranks])

    def structures(self) -> List[str]:
        return list(self.ranks)

    def metrics(self) -> Dict[str, Dict[str, float]]:
        """Per-structure metrics (per query, then averaged over queries) plus the AVG row"""
        out = {}
        for tag, per_query in self.ranks.items():
            rows = [query_metrics(r) for r in per_query]
            out[tag] = {m: float(np.mean([row[m] for row in rows])) for m in METRICS}
        if out:
            out["AVG"] = {m: float(np.mean([out[tag][m] for tag in self.ranks])) for m in METRICS}
        return out

    def counts(self) -> Dict[str, Dict[str, int]]:
        return {tag: {"queries": len(q), "answers": sum(len(r) for r in q)} for tag, q in self.ranks.items()}

    def to_dict(self) -> dict:
        return {"metrics": self.metrics(), "counts": self.counts(), "skipped": self.skipped}

    def to_frame(self) -> pd.DataFrame:
        """Flat `structure,metric,value` rows"""
        rows = [
            {"structure": tag, "metric": metric, "value": value}
            for tag, metrics in self.metrics().items()
            for metric, value in metrics.items()
        ]
        return pd.DataFrame(rows, columns=["structure", "metric", "value"])

    def table(self) -> pd.DataFrame:
        """One row per structure, one column per metric"""
        return pd.DataFrame.from_dict(self.metrics(), orient="index", columns=METRICS)


def aggregate(reports: Sequence[RankingReport]) -> RankingReport:
    """Merge reports (e.g. from chunks of one split) into one"""
    if not reports:
        raise ValueError("aggregate needs at least one report")
    merged = RankingReport()
    for report in reports:
        for tag, per_query in report.ranks.items():
            for ranks in per_query:
                merged.add(tag, ranks)
        merged.skipped += report.skipped
    return merged


def evaluate_split(model: ModelParams, records: Sequence[QueryRecord], splits: GraphSplits, which: str,
                   threads: int = 1, progress: bool = False) -> RankingReport:
    """
    Rank every record's hard answers on splits[which]
    Queries may run concurrently; the report is assembled in record order
    """
    if which not in ("valid", "test"):
        raise ValueError(f"evaluation split must be valid or test, got {which!r}")
    kg = splits[which]
    model.check_vocabularies(kg)

    def run(record: QueryRecord) -> List[Tuple[int, int]]:
        return rank_answers(model, record, kg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(tqdm(pool.map(run, records), total=len(records), desc=f"eval {which}",
                                disable=not progress))
    else:
        results = [run(r) for r in tqdm(records, desc=f"eval {which}", disable=not progress)]

    report = RankingReport()
    for record, ranked in zip(records, results):
        if not ranked:
            report.skipped += 1
            continue
        report.add(record.tag, [rank for _, rank in ranked])

    average = report.metrics().get("AVG", {})
    logger.info(f"Evaluated {len(records) - report.skipped} {which} queries "
                f"({report.skipped} skipped): AVG MRR {average.get('mrr', float('nan')):.4f}")
    return report


def simulate_random_baseline(records: Sequence[QueryRecord], kg: KnowledgeGraph, trials: int = 20,
                             seed: int = 0) -> RankingReport:
    """
    Expected metrics of a ranker that scores entities at random
    Each trial draws i.i.d. uniform distances and ranks them with the same filter as rank_answers
    """
    rng = np.random.default_rng(seed)
    report = RankingReport()
    for record in records:
        if not record.answers_hard:
            report.skipped += 1
            continue
        filtered = sorted(oracle_answer(kg, record.query) | record.answers_easy | record.answers_hard)
        answers = sorted(record.answers_hard)
        for _ in range(trials):
            report.add(record.tag, filtered_ranks(rng.random(kg.n_entities), answers, filtered))
    return report


# ---------------------------------------------------------------- tracing

@dataclass
class TraceEntry:
    path: str
    kind: str
    top: List[Tuple[int, float]]        # (entity id, score = -distance)

    def to_dict(self, kg: Optional[KnowledgeGraph] = None) -> dict:
        top = [{"entity": kg.entities.name(e) if kg is not None else e, "score": s} for e, s in self.top]
        return {"path": self.path, "kind": self.kind, "top": top}


def _top_k(distances: np.ndarray, k: int) -> List[Tuple[int, float]]:
    # stable sort keeps the lower id first among ties
    order = np.argsort(distances, kind="stable")[:k]
    return [(int(e), float(-distances[e])) for e in order]


def trace_intermediate(model: ModelParams, q: QueryNode, top_k: int = 10) -> List[TraceEntry]:
    """
    Top-k entities by score for every node of the computation graph (post-order)
    Or-queries without a trainable union are traced per DNF disjunct ("dnf0.root...")
    and closed by a "root" entry over the aggregated distances
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    if contains_or(q) and not model.config.trainable_union:
        entries, per_disjunct = [], []
        for i, disjunct in enumerate(to_dnf(q)):
            sub = trace_intermediate(model, disjunct, top_k)
            entries.extend(TraceEntry(f"dnf{i}.{e.path}", e.kind, e.top) for e in sub)
            per_disjunct.append(query_distances(model, disjunct))
        combined = disjunctive_distance(per_disjunct, model.config.dnf_aggregator)
        entries.append(TraceEntry("root", "union", _top_k(combined, top_k)))
        return entries

    embeddings: Dict[str, FeatureLogicEmbedding] = {}
    embed_query(model, Tape(), [q], trace=embeddings)
    return [
        TraceEntry(path, node_kind(node), _top_k(_embedding_distances(model, embeddings[path]), top_k))
        for path, node in iter_nodes(q)
    ]


def score_histogram(model: ModelParams, q: QueryNode, answers: Sequence[int], bins: int = 10) -> pd.DataFrame:
    """
    Entity counts per score interval, split into answers and non-answers
    Returns:
        DataFrame with columns low, high, answers, non_answers
    """
    scores = -query_distances(model, q)
    is_answer = np.zeros(scores.shape[0], dtype=bool)
    is_answer[list(answers)] = True
    edges = np.histogram_bin_edges(scores, bins=bins)
    hit_counts, _ = np.histogram(scores[is_answer], bins=edges)
    miss_counts, _ = np.histogram(scores[~is_answer], bins=edges)
    return pd.DataFrame({"low": edges[:-1], "high": edges[1:], "answers": hit_counts, "non_answers": miss_counts})


# ---------------------------------------------------------------- multi-seed

@dataclass
class SeedSummary:
    rows: pd.DataFrame          # seed, structure, metric, value
    summary: pd.DataFrame       # structure, metric, mean, std

    def to_dict(self) -> dict:
        return {
            "seeds": sorted(int(s) for s in self.rows["seed"].unique()),
            "summary": self.summary.to_dict(orient="records"),
        }


def multi_seed_summary(config: ModelConfig, seeds: Sequence[int], train_records: Sequence[QueryRecord],
                       eval_records: Sequence[QueryRecord], splits: GraphSplits, which: str = "test",
                       threads: int = 1) -> SeedSummary:
    """
    Train and evaluate once per seed
    Returns:
        per-seed rows plus mean and sample standard deviation per structure and metric
    """
    if len(seeds) < 2:
        raise ConfigError(f"multi_seed_summary needs at least 2 seeds, got {len(seeds)}")

    frames = []
    for seed in seeds:
        logger.info(f"Seed {seed}: training")
        result = train(train_records, splits.train, replace(config, seed=int(seed)))
        report = evaluate_split(result.model, eval_records, splits, which, threads=threads)
        frame = report.to_frame()
        frame.insert(0, "seed", int(seed))
        frames.append(frame)

    rows = pd.concat(frames, ignore_index=True)
    summary = (rows.groupby(["structure", "metric"], sort=False)["value"]
               .agg(mean="mean", std=lambda v: float(v.std(ddof=1)))
               .reset_index())
    return SeedSummary(rows, summary)
