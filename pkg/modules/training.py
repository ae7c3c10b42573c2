"""
Distances, the negative-sampling loss, Adam and the training loop
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .autodiff import Node, Param, Tape, scalar_value
from .config import OUTPUT_FILES, ModelConfig
from .embeddings import FeatureLogicEmbedding, ModelParams, init_model, load_checkpoint, rng_streams, save_checkpoint
from .errors import ShapeError, TrainingError
from .kg_store import KnowledgeGraph
from .operators import embed_query
from .query_model import QueryNode, QueryRecord, contains_or, shape_signature, to_dnf

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


# ---------------------------------------------------------------- distances and loss

def conjunctive_distance(entity_features: Node, V: FeatureLogicEmbedding, reduction: str = "sum") -> Node:
    """
    d(v; V_q) = ||theta_v,f - theta_q,f||_1 + sum_i theta_q,l[i]  (mean over dims with reduction="mean")
    Arguments:
        entity_features: (B, F*d) entity rows
        V: (B, ...) query embeddings, row-aligned with the entities
    Returns:
        (B,) distances
    """
    tape = V.tape
    if entity_features.shape != V.features.shape:
        raise ShapeError("conjunctive_distance", [entity_features.shape, V.features.shape])
    distance = tape.sum(tape.abs(entity_features - V.features), axis=1)
    if V.logic is None:
        return distance
    uncertainty = tape.sum(V.logic, axis=1)
    if reduction == "mean":
        uncertainty = uncertainty * (1.0 / V.dim)
    return distance + uncertainty


def _or_fold(a, b):
    return a + b - a * b


def disjunctive_distance(distances: Sequence, aggregator: str = "vector-or"):
    """
    Combine per-disjunct distances (Nodes or arrays of one shape)
    vector-or folds a + b - ab left to right, min takes the smallest
    """
    distances = list(distances)
    if not distances:
        raise ValueError("disjunctive_distance needs at least one disjunct")
    if aggregator == "vector-or":
        return reduce(_or_fold, distances)
    if aggregator == "min":
        if isinstance(distances[0], Node):
            return reduce(lambda a, b: a.tape.minimum(a, b), distances)
        return reduce(np.minimum, distances)
    raise ValueError(f"Unknown aggregator {aggregator!r}")


def negative_sampling_loss(positive: Node, negatives: Node, gamma: float) -> Node:
    """
    mean over the batch of -log sig(gamma - d+) - (1/k) sum_i log sig(d-_i - gamma)
    Arguments:
        positive: (B,) distances to the positive answers
        negatives: (B, k) distances to the sampled negatives
        gamma: margin
    Returns:
        scalar loss node
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    tape = positive.tape
    if negatives.value.ndim != 2 or negatives.shape[0] != positive.shape[0]:
        raise ShapeError("negative_sampling_loss", [positive.shape, negatives.shape])
    batch, k = negatives.shape

    positive_term = tape.logsigmoid(gamma - positive)
    negative_term = tape.sum(tape.logsigmoid(negatives - gamma), axis=1) * (1.0 / k)
    return tape.sum(positive_term + negative_term) * (-1.0 / batch)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0


def adam_step(params: Sequence[Param], state: AdamState, lr: float):
    """Bias-corrected Adam update from each Param's accumulated grad, in place"""
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for p in params:
        p.adam_m *= state.beta1
        p.adam_m += (1.0 - state.beta1) * p.grad
        p.adam_v *= state.beta2
        p.adam_v += (1.0 - state.beta2) * p.grad * p.grad
        m_hat = p.adam_m / correction1
        v_hat = p.adam_v / correction2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------- batches

@dataclass
class TrainExample:
    """A training record prepared for batching"""
    tag: str
    query: QueryNode
    answers: np.ndarray                 # sorted answer ids
    disjuncts: Optional[List[QueryNode]] = None

    @property
    def signature(self) -> str:
        return shape_signature(self.query, normalize=False)


@dataclass
class TrainBatch:
    """One step's examples with their sampled positives and negatives"""
    examples: List[TrainExample]
    positives: np.ndarray               # (B,)
    negatives: np.ndarray               # (B, k)

    def groups(self) -> List[Tuple[str, List[int]]]:
        """Example indices grouped by raw shape, in order of first appearance"""
        out: Dict[str, List[int]] = {}
        for i, ex in enumerate(self.examples):
            out.setdefault(ex.signature, []).append(i)
        return list(out.items())


def prepare_examples(records: Sequence[QueryRecord], config: ModelConfig, n_entities: int) -> List[TrainExample]:
    """
    Filter records by the structure list and expand Or-queries into DNF unless the union is trainable
    Raises TrainingError when nothing is left to train on
    """
    allowed = set(config.train_structures) if config.train_structures is not None else None
    examples, skipped = [], 0
    for record in records:
        if allowed is not None and record.tag not in allowed:
            continue
        answers = record.answers
        if not answers or len(answers) >= n_entities:
            skipped += 1
            continue
        disjuncts = None
        if contains_or(record.query) and not config.trainable_union:
            disjuncts = to_dnf(record.query)
        examples.append(TrainExample(record.tag, record.query, np.array(sorted(answers), dtype=np.int64), disjuncts))

    if skipped:
        logger.warning(f"Skipped {skipped} training records with no answers or no possible negatives")
    if not examples:
        wanted = sorted(allowed) if allowed is not None else "all"
        raise TrainingError(f"No training records left after filtering structures ({wanted})")
    return examples


def sample_negatives(rng: np.random.Generator, answers: np.ndarray, n_entities: int, k: int) -> np.ndarray:
    """k entity ids drawn uniformly from the non-answers (rejection sampling)"""
    out = np.empty(k, dtype=np.int64)
    filled = 0
    while filled < k:
        draw = rng.integers(0, n_entities, size=2 * (k - filled))
        keep = draw[~np.isin(draw, answers)][:k - filled]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    return out


class BatchSampler:
    """
    Walks a seeded permutation of the examples, reshuffling when it runs out
    Its state (rng, order, cursor) is what a checkpoint needs to resume identically
    """

    def __init__(self, examples: List[TrainExample], rng: np.random.Generator, n_entities: int,
                 batch_size: int, k: int, order: Optional[np.ndarray] = None, cursor: int = 0):
        self.examples = examples
        self.rng = rng
        self.n_entities = n_entities
        self.batch_size = batch_size
        self.k = k
        self.order = order if order is not None else rng.permutation(len(examples))
        self.cursor = cursor
        if len(self.order) != len(examples):
            raise TrainingError(f"Stored batch order covers {len(self.order)} examples, dataset has {len(examples)}")

    def _next_index(self) -> int:
        if self.cursor >= len(self.order):
            self.order = self.rng.permutation(len(self.examples))
            self.cursor = 0
        idx = int(self.order[self.cursor])
        self.cursor += 1
        return idx

    def next_batch(self) -> TrainBatch:
        chosen = [self.examples[self._next_index()] for _ in range(self.batch_size)]
        positives = np.array([self.rng.choice(ex.answers) for ex in chosen], dtype=np.int64)
        negatives = np.stack([sample_negatives(self.rng, ex.answers, self.n_entities, self.k) for ex in chosen])
        return TrainBatch(chosen, positives, negatives)


# ---------------------------------------------------------------- loss for one group

def _query_distances(model: ModelParams, tape: Tape, queries: List[QueryNode],
                     positives: np.ndarray, negatives: np.ndarray) -> Tuple[Node, Node]:
    config = model.config
    batch, k = negatives.shape
    V = embed_query(model, tape, queries)
    pos = conjunctive_distance(model.lookup_entity(tape, positives).features, V, config.logic_reduction)

    repeated = FeatureLogicEmbedding(
        tape.repeat_rows(V.features, k),
        tape.repeat_rows(V.logic, k) if V.logic is not None else None,
        V.n_parts, V.dim,
    )
    neg_entities = model.lookup_entity(tape, negatives.reshape(-1)).features
    neg = conjunctive_distance(neg_entities, repeated, config.logic_reduction)
    return pos, tape.reshape(neg, (batch, k))


def group_loss(model: ModelParams, tape: Tape, examples: List[TrainExample],
               positives: np.ndarray, negatives: np.ndarray) -> Node:
    """Loss of examples that share one raw shape"""
    config = model.config
    if examples[0].disjuncts is None:
        pos, neg = _query_distances(model, tape, [ex.query for ex in examples], positives, negatives)
    else:
        per_disjunct = [
            _query_distances(model, tape, [ex.disjuncts[i] for ex in examples], positives, negatives)
            for i in range(len(examples[0].disjuncts))
        ]
        pos = disjunctive_distance([p for p, _ in per_disjunct], config.dnf_aggregator)
        neg = disjunctive_distance([n for _, n in per_disjunct], config.dnf_aggregator)
    return negative_sampling_loss(pos, neg, config.gamma)


def train_step(model: ModelParams, batch: TrainBatch, state: AdamState) -> float:
    """
    One optimizer step: per-shape groups are backpropagated separately with
    weight group_size / batch_size, then a single Adam update
    Returns:
        the batch loss
    """
    params = model.params()
    for p in params:
        p.zero_grad()

    total = 0.0
    size = len(batch.examples)
    for _, indices in batch.groups():
        tape = Tape()
        loss = group_loss(model, tape, [batch.examples[i] for i in indices],
                          batch.positives[indices], batch.negatives[indices])
        weighted = loss * (len(indices) / size)
        tape.backward(weighted)
        total += scalar_value(weighted)
        logger.debug(f"group {batch.examples[indices[0]].tag}: {len(indices)} queries, loss {scalar_value(loss):.4f}")

    if not math.isfinite(total):
        raise TrainingError(f"Non-finite loss at step {state.step + 1}")
    adam_step(params, state, model.config.lr)
    return total


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    model: ModelParams
    losses: List[float] = field(default_factory=list)
    trace: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=["step", "loss", "structure_mix"]))
    start_step: int = 0

    @property
    def steps(self) -> int:
        return self.start_step + len(self.losses)


def _append_loss_rows(path: Path, rows: List[dict]):
    frame = pd.DataFrame(rows, columns=["step", "loss", "structure_mix"])
    frame.to_csv(path, mode="a", header=not path.exists(), index=False, lineterminator="\n")


def _truncate_loss_rows(path: Path, last_step: int):
    # rows past the resume step belong to the run being replaced
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    kept = frame[frame["step"].astype(int) <= last_step]
    if len(kept) < len(frame):
        logger.info(f"Dropping {len(frame) - len(kept)} loss rows after step {last_step} from {path}")
        kept.to_csv(path, index=False, lineterminator="\n")


def _check_resumable(stored: ModelConfig, wanted: ModelConfig):
    keys = ("dim", "feature_parts", "hidden", "L", "ablate_logic", "attention")
    mismatched = [k for k in keys if getattr(stored, k) != getattr(wanted, k)]
    if mismatched:
        raise TrainingError(f"Checkpoint architecture differs from the config in: {', '.join(mismatched)}")


def train(records: Sequence[QueryRecord], kg: KnowledgeGraph, config: ModelConfig,
          out_dir=None, resume_from=None, progress: bool = False) -> TrainResult:
    """
    Train a model on query records
    Arguments:
        records: training QueryRecords (answers on the train graph)
        kg: the train graph (vocabularies and entity count)
        config: model / training config; config.steps is the total step count
        out_dir: when set, loss.csv and checkpoints are written here
        resume_from: checkpoint to continue from (same data, same config)
        progress: show a tqdm bar
    Returns:
        TrainResult with the model and the per-step loss trace
    """
    examples = prepare_examples(records, config, kg.n_entities)
    _, train_rng = rng_streams(config.seed)

    if resume_from is not None:
        checkpoint = load_checkpoint(resume_from, kg)
        _check_resumable(checkpoint.model.config, config)
        model = checkpoint.model
        model.config = config
        if checkpoint.rng_state is not None:
            train_rng.bit_generator.state = checkpoint.rng_state
        state = AdamState(step=checkpoint.adam_step)
        start = checkpoint.step
        window, mix = list(checkpoint.window), Counter(checkpoint.mix)
        sampler = BatchSampler(examples, train_rng, kg.n_entities, config.batch_size, config.negatives,
                               order=checkpoint.order, cursor=checkpoint.cursor)
        logger.info(f"Resuming from {resume_from} at step {start}")
    else:
        model = init_model(kg, config)
        state = AdamState()
        start = 0
        window, mix = [], Counter()
        sampler = BatchSampler(examples, train_rng, kg.n_entities, config.batch_size, config.negatives)

    out_dir = Path(out_dir) if out_dir is not None else None
    loss_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        loss_path = out_dir / OUTPUT_FILES["loss"]
        if start == 0 and loss_path.exists():
            loss_path.unlink()
        elif loss_path.exists():
            _truncate_loss_rows(loss_path, start)

    def checkpoint_here(path: Path, step: int):
        save_checkpoint(path, model, step=step, adam_step=state.step, rng_state=train_rng.bit_generator.state,
                        cursor=sampler.cursor, order=sampler.order, window=window, mix=mix)

    result = TrainResult(model=model, start_step=start)
    structures = sorted({ex.tag for ex in examples})
    logger.info(f"Training on {len(examples)} queries ({', '.join(structures)}) "
                f"for steps {start + 1}..{config.steps}, batch {config.batch_size}, k={config.negatives}")

    rows: List[dict] = []
    steps = range(start + 1, config.steps + 1)
    for step in tqdm(steps, desc="train", unit="step", disable=not progress):
        batch = sampler.next_batch()
        loss = train_step(model, batch, state)
        result.losses.append(loss)
        window.append(loss)
        mix.update(ex.tag for ex in batch.examples)

        if step % config.log_every == 0 or step == config.steps:
            mean_loss = float(np.mean(window))
            row = {"step": step, "loss": mean_loss,
                   "structure_mix": ";".join(f"{tag}:{n}" for tag, n in sorted(mix.items()))}
            rows.append(row)
            logger.info(f"step {step}/{config.steps} loss {mean_loss:.4f}")
            window, mix = [], Counter()
            if loss_path is not None:
                _append_loss_rows(loss_path, [row])

        if out_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            checkpoint_here(out_dir / OUTPUT_FILES["checkpoints"] / f"step-{step}", step)

    result.trace = pd.DataFrame(rows, columns=["step", "loss", "structure_mix"])
    if out_dir is not None:
        checkpoint_here(out_dir / OUTPUT_FILES["final"], max(config.steps, start))

    if result.losses:
        logger.info(f"Finished training: final loss {result.losses[-1]:.4f}")
    return result


def loss_decreased(losses: Sequence[float], fraction: float = 0.1) -> bool:
    """Mean of the last `fraction` of the trace is below the mean of the first"""
    n = max(1, int(len(losses) * fraction))
    if len(losses) < 2 * n:
        return False
    return float(np.mean(losses[-n:])) < float(np.mean(losses[:n]))
