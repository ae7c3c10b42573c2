"""
Entity / relation parameter tables, the feature-logic embedding value,
initialization, parameter accounting and the checkpoint container
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .autodiff import Node, Param, Tape
from .config import APP_VERSION, ATTENTION_KINDS, CHECKPOINT_VERSION, ModelConfig
from .errors import CheckpointError, ConfigError, VocabularyError
from .kg_store import KnowledgeGraph, Vocabulary
from .networks import OperatorNets

logger = logging.getLogger(__name__)

__all__ = [
    "FeatureLogicEmbedding", "ModelConfig", "ModelParams", "ParamReport", "Checkpoint",
    "rng_streams", "init_model", "count_params", "save_checkpoint", "load_checkpoint",
]


def rng_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent (init, train) generators derived from one run seed"""
    init_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(train_seq)


@dataclass
class FeatureLogicEmbedding:
    """
    A batch of B feature-logic embeddings on a tape
    features: (B, F*d), F feature parts laid side by side
    logic:    (B, d) truth vectors, None when the logic part is ablated
    """
    features: Node
    logic: Optional[Node]
    n_parts: int
    dim: int

    @property
    def tape(self) -> Tape:
        return self.features.tape

    @property
    def batch(self) -> int:
        return self.features.shape[0]

    def part(self, j: int) -> Node:
        if not 0 <= j < self.n_parts:
            raise IndexError(f"feature part {j} out of range [0, {self.n_parts})")
        return self.tape.slice(self.features, j * self.dim, (j + 1) * self.dim)

    def feature_parts(self) -> List[Node]:
        if self.n_parts == 1:
            return [self.features]
        return [self.part(j) for j in range(self.n_parts)]

    def with_logic(self) -> Node:
        """[features; logic] as one (B, F*d + d) row"""
        if self.logic is None:
            return self.features
        return self.tape.concat([self.features, self.logic])


@dataclass(eq=False)
class ModelParams:
    """All trainable state of a model plus the vocabularies it was built for"""
    config: ModelConfig
    entity_features: Param
    relation_features: Param
    relation_logic: Optional[Param]
    nets: OperatorNets
    entity_names: Tuple[str, ...]
    relation_names: Tuple[str, ...]

    @property
    def n_entities(self) -> int:
        return self.entity_features.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_features.shape[0]

    def params(self) -> List[Param]:
        """Every Param in a fixed order (tables first, then nets)"""
        tables = [self.entity_features, self.relation_features]
        if self.relation_logic is not None:
            tables.append(self.relation_logic)
        return tables + self.nets.params()

    def n_floats(self) -> int:
        return sum(p.size for p in self.params())

    def lookup_entity(self, tape: Tape, ids: Sequence[int]) -> FeatureLogicEmbedding:
        """Entity rows; the logic part is the constant zero vector (no gradient path)"""
        ids = self._check_ids(ids, self.n_entities, "Entity")
        features = tape.gather(tape.param(self.entity_features), ids)
        logic = None
        if self.config.logic_dim:
            logic = tape.constant(np.zeros((len(ids), self.config.dim)))
        return FeatureLogicEmbedding(features, logic, self.config.feature_parts, self.config.dim)

    def lookup_relation(self, tape: Tape, ids: Sequence[int]) -> Tuple[Node, Optional[Node]]:
        """(relation features, relation logic) rows for a batch of relation ids"""
        ids = self._check_ids(ids, self.n_relations, "Relation")
        features = tape.gather(tape.param(self.relation_features), ids)
        logic = None
        if self.relation_logic is not None:
            logic = tape.gather(tape.param(self.relation_logic), ids)
        return features, logic

    @staticmethod
    def _check_ids(ids, limit: int, what: str) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        bad = ids[(ids < 0) | (ids >= limit)]
        if bad.size:
            raise VocabularyError(f"{what} id {int(bad[0])} out of range [0, {limit})")
        return ids

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for p in self.params():
            digest.update(p.name.encode("utf-8"))
            digest.update(p.value.tobytes())
        return digest.hexdigest()

    def vocab_hashes(self) -> Dict[str, str]:
        return {
            "entities": Vocabulary(self.entity_names).fingerprint(),
            "relations": Vocabulary(self.relation_names).fingerprint(),
        }

    def graph(self) -> KnowledgeGraph:
        """An edge-free graph carrying the model's vocabularies (for parsing queries without data)"""
        return KnowledgeGraph(Vocabulary(self.entity_names), Vocabulary(self.relation_names), ())

    def check_vocabularies(self, kg: KnowledgeGraph):
        if kg.entities.names != self.entity_names or kg.relations.names != self.relation_names:
            raise VocabularyError(
                f"Model vocabularies ({self.n_entities} entities, {self.n_relations} relations) "
                f"don't match the data ({kg.n_entities} entities, {kg.n_relations} relations)"
            )


def _feature_table(rng: np.random.Generator, rows: int, config: ModelConfig) -> np.ndarray:
    half = config.L / 2 if config.bounded else 0.5
    return rng.uniform(-half, half, size=(rows, config.feature_parts * config.dim))


def init_model(kg: KnowledgeGraph, config: ModelConfig, seed: Optional[int] = None) -> ModelParams:
    """
    Fresh model for kg's vocabularies
    Arguments:
        kg: any graph with the target vocabularies
        config: model config
        seed: init seed, defaults to config.seed
    Returns:
        ModelParams, fully determined by the seed
    """
    if kg.n_entities == 0 or kg.n_relations == 0:
        raise VocabularyError("Cannot build a model over an empty vocabulary")

    init_rng, _ = rng_streams(config.seed if seed is None else seed)
    entity_features = Param("entity.features", _feature_table(init_rng, kg.n_entities, config))
    relation_features = Param("relation.features", _feature_table(init_rng, kg.n_relations, config))
    relation_logic = None
    if config.logic_dim:
        relation_logic = Param("relation.logic", init_rng.uniform(-0.5, 0.5, size=(kg.n_relations, config.dim)))
    nets = OperatorNets.create(config, init_rng)

    model = ModelParams(config, entity_features, relation_features, relation_logic, nets,
                        kg.entities.names, kg.relations.names)
    logger.info(f"Initialized model: {kg.n_entities} entities, {kg.n_relations} relations, "
                f"d={config.dim}, F={config.feature_parts}, {model.n_floats():,} parameters")
    return model


# ---------------------------------------------------------------- parameter accounting

@dataclass
class ParamReport:
    """Itemized parameter count; formula_weights covers the components marked in_formula"""
    rows: List[dict] = field(default_factory=list)

    def add(self, component: str, weights: int, biases: int = 0, in_formula: bool = False):
        self.rows.append({"component": component, "weights": int(weights), "biases": int(biases),
                          "in_formula": in_formula})

    @property
    def weights(self) -> int:
        return sum(r["weights"] for r in self.rows)

    @property
    def biases(self) -> int:
        return sum(r["biases"] for r in self.rows)

    @property
    def total(self) -> int:
        return self.weights + self.biases

    @property
    def formula_weights(self) -> int:
        return sum(r["weights"] for r in self.rows if r["in_formula"])

    def table(self) -> pd.DataFrame:
        df = pd.DataFrame(self.rows, columns=["component", "weights", "biases", "in_formula"])
        df["total"] = df["weights"] + df["biases"]
        return df


def _mlp_counts(in_dim: int, hidden: int, out_dim: int) -> Tuple[int, int]:
    return in_dim * hidden + hidden * out_dim, hidden + out_dim


def count_params(config: ModelConfig, n_entities: int, n_relations: int) -> ParamReport:
    """
    Closed-form parameter count for the configured architecture
    The in_formula rows (tables, projection net, intersection attention) grow by
    exactly (n + m)d + 2hd + 3d^2 weights per extra feature part
    """
    d, F, h, dl = config.dim, config.feature_parts, config.h, config.logic_dim
    width = F * d + dl

    report = ParamReport()
    report.add("entity.features", n_entities * F * d, in_formula=True)
    report.add("relation.features", n_relations * F * d, in_formula=True)
    if dl:
        report.add("relation.logic", n_relations * dl)
    report.add("projection", *_mlp_counts(width, h, width), in_formula=True)
    report.add("negation", *_mlp_counts(width, d, F * d))
    for kind in ATTENTION_KINDS:
        weights, biases = _mlp_counts(d + dl, d, d)
        report.add(f"attention.{kind}", F * weights, F * biases, in_formula=kind == "intersection")
    return report


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    """What a checkpoint restores: the model and, for training, where it stopped"""
    model: ModelParams
    step: int = 0
    adam_step: int = 0
    rng_state: Optional[dict] = None
    cursor: int = 0
    order: Optional[np.ndarray] = None
    window: List[float] = field(default_factory=list)   # losses since the last logged step
    mix: Dict[str, int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, model: ModelParams, step: int = 0, adam_step: int = 0,
                    rng_state: Optional[dict] = None, cursor: int = 0,
                    order: Optional[np.ndarray] = None, window: Sequence[float] = (),
                    mix: Optional[Dict[str, int]] = None) -> Path:
    """
    Write one .npz container: JSON metadata, every Param value and its Adam moments
    The path is used verbatim (no suffix is appended)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": CHECKPOINT_VERSION,
        "app_version": APP_VERSION,
        "config": model.config.to_dict(),
        "entities": list(model.entity_names),
        "relations": list(model.relation_names),
        "vocab_hashes": model.vocab_hashes(),
        "step": int(step),
        "adam_step": int(adam_step),
        "rng_state": rng_state,
        "cursor": int(cursor),
        "window": [float(x) for x in window],
        "mix": dict(mix or {}),
    }
    arrays = {"__meta__": np.array(json.dumps(meta))}
    for p in model.params():
        arrays[p.name] = p.value
        arrays[f"{p.name}::m"] = p.adam_m
        arrays[f"{p.name}::v"] = p.adam_v
    if order is not None:
        arrays["__order__"] = np.asarray(order, dtype=np.int64)

    try:
        with open(path, "wb") as f:
            np.savez(f, **arrays)
    except OSError as e:
        logger.error(f"Could not write checkpoint {path}: {e}")
        raise
    logger.info(f"Saved checkpoint {path} (step {step})")
    return path


def load_checkpoint(path, kg: Optional[KnowledgeGraph] = None) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint
    Arguments:
        path: checkpoint file
        kg: when given, its vocabulary hashes must match the checkpoint's
    Returns:
        Checkpoint
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint {path} does not exist")

    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
        meta = json.loads(str(arrays.pop("__meta__")))
    except (OSError, ValueError, KeyError) as e:
        logger.error(f"Could not read checkpoint {path}: {e}")
        raise CheckpointError(f"{path} is not a readable checkpoint: {e}")

    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {meta.get('version')!r}, expected {CHECKPOINT_VERSION}")

    try:
        config = ModelConfig.from_dict(meta["config"])
    except ConfigError as e:
        raise CheckpointError(f"{path}: bad stored config: {e}")

    entities, relations = Vocabulary(meta["entities"]), Vocabulary(meta["relations"])
    stored = meta["vocab_hashes"]
    if stored != {"entities": entities.fingerprint(), "relations": relations.fingerprint()}:
        raise CheckpointError(f"{path}: vocabulary hashes don't match the stored names")
    if kg is not None and (kg.entities.fingerprint() != stored["entities"]
                           or kg.relations.fingerprint() != stored["relations"]):
        raise CheckpointError(f"{path}: checkpoint vocabularies don't match the dataset")

    # rebuild the architecture, then overwrite every Param from the file
    skeleton = KnowledgeGraph(entities, relations, ())
    model = init_model(skeleton, config, seed=0)
    for p in model.params():
        if p.name not in arrays:
            raise CheckpointError(f"{path}: missing tensor {p.name}")
        value = arrays[p.name]
        if value.shape != p.shape:
            raise CheckpointError(f"{path}: tensor {p.name} has shape {value.shape}, expected {p.shape}")
        p.value[...] = value
        p.adam_m[...] = arrays.get(f"{p.name}::m", np.zeros_like(value))
        p.adam_v[...] = arrays.get(f"{p.name}::v", np.zeros_like(value))

    logger.info(f"Loaded checkpoint {path} (step {meta['step']})")
    return Checkpoint(
        model=model,
        step=int(meta["step"]),
        adam_step=int(meta.get("adam_step", 0)),
        rng_state=meta.get("rng_state"),
        cursor=int(meta.get("cursor", 0)),
        order=arrays.get("__order__"),
        window=[float(x) for x in meta.get("window", [])],
        mix={k: int(v) for k, v in meta.get("mix", {}).items()},
        meta=meta,
    )
