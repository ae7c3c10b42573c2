"""
App config file
It has all the constants here so we don't have magic numbers everywhere,
plus the typed config objects (model, dataset generation, run) built on top of them
"""
import json
import logging
import math
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError

# Application settings
APP_NAME = "flex"
APP_VERSION = "1.0.0"
APP_DESCRIPTION = "Feature-logic embeddings for first-order-logic queries over knowledge graphs"

BASE_DIR = Path(__file__).parent.parent

# Query structures - the 14 canonical shapes
EPFO_TRAIN_STRUCTURES = ["1p", "2p", "3p", "2i", "3i"]
NEGATION_STRUCTURES = ["2in", "3in", "inp", "pin", "pni"]
EVAL_ONLY_STRUCTURES = ["ip", "pi", "2u", "up"]
UNION_STRUCTURES = ["2u", "up"]
TRAIN_STRUCTURES = EPFO_TRAIN_STRUCTURES + NEGATION_STRUCTURES
ALL_STRUCTURES = ["1p", "2p", "3p", "2i", "3i", "ip", "pi", "2u", "up",
                  "2in", "3in", "inp", "pin", "pni"]

# Training curricula (named structure filters)
CURRICULA = {
    "1p": ["1p"],
    "1p.2p.3p": ["1p", "2p", "3p"],
    "1p.2p.3p.2i.3i": ["1p", "2p", "3p", "2i", "3i"],
    "all": None,
}

# Full-scale hyperparameters, kept for reference runs
FULL_SCALE_HYPERPARAMETERS = {
    "dim": 800,
    "batch_size": 512,
    "negatives": 128,
    "gamma": 30.0,
    "lr": 1e-4,
}

# Operator / numeric settings
ROUNDOFF_TOLERANCE = 1e-9     # largest pre-clamp deviation we accept as round-off
LOG_FLOOR = 1e-12             # log() argument floor
MAX_DNF_DISJUNCTS = 64
ATTENTION_KINDS = ("intersection", "union", "impl", "xor")

# Evaluation
HITS_AT = (1, 3, 10)

# Dataset files
TRIPLE_FILES = {"train": "train.txt", "valid": "valid.txt", "test": "test.txt"}
QUERY_FILES = {"train": "train-queries.jsonl", "valid": "valid-queries.jsonl", "test": "test-queries.jsonl"}
GEN_SPEC_FILE = "spec.json"

# Output directory layout
OUTPUT_FILES = {
    "config": "config.json",
    "loss": "loss.csv",
    "checkpoints": "checkpoints",
    "final": "final",
    "report": "report.json",
    "report_csv": "report.csv",
    "report_xlsx": "report.xlsx",
    "summary": "summary.json",
}

CHECKPOINT_VERSION = 1

# Logging
LOG_ENV_VAR = "FLEX_LOG"
LOG_FILE_ENV_VAR = "FLEX_LOG_FILE"
LOG_LEVELS = {
    "error": logging.ERROR,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level_name: Optional[str] = None, log_file: Optional[str] = None):
    """
    Configure root logging once for the CLI
    Arguments:
        level_name: one of LOG_LEVELS, falls back to $FLEX_LOG then "info"
        log_file: optional extra file handler, falls back to $FLEX_LOG_FILE
    """
    level_name = (level_name or os.environ.get(LOG_ENV_VAR) or "info").lower()
    if level_name not in LOG_LEVELS:
        raise ConfigError(f"{LOG_ENV_VAR} must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")

    handlers = [logging.StreamHandler(sys.stderr)]
    log_file = log_file or os.environ.get(LOG_FILE_ENV_VAR)
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(level=LOG_LEVELS[level_name], format=LOG_FORMAT, handlers=handlers, force=True)


def _parse_bound(value) -> float:
    # L may be written as "inf" in TOML/JSON for the unbounded feature space
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "∞"):
            return math.inf
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"L must be a number or 'inf', got {value!r}")
    return float(value)


def _from_dict(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in [{section}]: {', '.join(unknown)}")
    return cls(**data)


@dataclass
class ModelConfig:
    """
    Model and training hyperparameters
    Desk-scale defaults; FULL_SCALE_HYPERPARAMETERS holds the full-scale values
    """
    dim: int = 32
    feature_parts: int = 1
    L: float = 1.0
    hidden: Optional[int] = None            # projection hidden width, None -> 2 * dim
    intersection_variant: str = "product"   # product (I) | min (I2)
    union_variant: str = "incl-excl"        # incl-excl (U) | max (U2)
    dnf_aggregator: str = "vector-or"       # vector-or | min
    attention: str = "dimension"            # dimension | scalar
    logic_reduction: str = "sum"            # sum | mean
    ablate_logic: bool = False
    trainable_union: bool = False
    train_structures: Optional[list] = None
    gamma: float = 3.0
    lr: float = 1e-3
    batch_size: int = 64
    negatives: int = 16
    steps: int = 3000
    seed: int = 1
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        self.L = _parse_bound(self.L)
        if isinstance(self.train_structures, str):
            if self.train_structures not in CURRICULA:
                raise ConfigError(f"Unknown curriculum {self.train_structures!r}, expected one of {sorted(CURRICULA)}")
            self.train_structures = CURRICULA[self.train_structures]
        self.validate()

    @property
    def h(self) -> int:
        return self.hidden if self.hidden is not None else 2 * self.dim

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.L)

    @property
    def logic_dim(self) -> int:
        return 0 if self.ablate_logic else self.dim

    def validate(self):
        """Check the invariants, raise ConfigError on the first violation"""
        checks = [
            (self.dim >= 2, f"dim must be >= 2, got {self.dim}"),
            (self.feature_parts >= 1, f"feature_parts must be >= 1, got {self.feature_parts}"),
            (self.h >= 1, f"hidden must be >= 1, got {self.h}"),
            (self.L > 0, f"L must be > 0, got {self.L}"),
            (self.gamma > 0, f"gamma must be > 0, got {self.gamma}"),
            (self.lr > 0, f"lr must be > 0, got {self.lr}"),
            (self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            (self.negatives >= 1, f"negatives must be >= 1, got {self.negatives}"),
            (self.steps >= 0, f"steps must be >= 0, got {self.steps}"),
            (self.log_every >= 1, f"log_every must be >= 1, got {self.log_every}"),
            (self.checkpoint_every >= 0, f"checkpoint_every must be >= 0, got {self.checkpoint_every}"),
            (self.intersection_variant in ("product", "min"), f"intersection_variant must be product|min, got {self.intersection_variant!r}"),
            (self.union_variant in ("incl-excl", "max"), f"union_variant must be incl-excl|max, got {self.union_variant!r}"),
            (self.dnf_aggregator in ("vector-or", "min"), f"dnf_aggregator must be vector-or|min, got {self.dnf_aggregator!r}"),
            (self.attention in ("dimension", "scalar"), f"attention must be dimension|scalar, got {self.attention!r}"),
            (self.logic_reduction in ("sum", "mean"), f"logic_reduction must be sum|mean, got {self.logic_reduction!r}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if self.train_structures is not None:
            unknown = sorted(set(self.train_structures) - set(ALL_STRUCTURES))
            if unknown:
                raise ConfigError(f"Unknown structures in train_structures: {unknown}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["L"] = "inf" if not self.bounded else self.L
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return _from_dict(cls, dict(data), "model")


@dataclass
class GenSpec:
    """Synthetic dataset generation settings"""
    n_entities: int = 200
    n_relations: int = 10
    train_edges: int = 2000     # triples including materialized inverses
    valid_edges: int = 200
    test_edges: int = 200
    train_queries: int = 200    # per EPFO training structure
    eval_queries: int = 50      # per structure, for valid and test each
    negation_ratio: float = 0.1
    train_union_queries: int = 0
    train_structures: list = field(default_factory=lambda: list(TRAIN_STRUCTURES))
    eval_structures: list = field(default_factory=lambda: list(ALL_STRUCTURES))
    answer_cap: int = 100
    seed: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        counts = {
            "n_entities": self.n_entities, "n_relations": self.n_relations,
            "train_edges": self.train_edges, "valid_edges": self.valid_edges,
            "test_edges": self.test_edges, "train_queries": self.train_queries,
            "eval_queries": self.eval_queries, "answer_cap": self.answer_cap,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.n_entities < 2:
            raise ConfigError(f"n_entities must be >= 2, got {self.n_entities}")
        if not 0 <= self.negation_ratio <= 1:
            raise ConfigError(f"negation_ratio must be in [0, 1], got {self.negation_ratio}")
        if self.train_union_queries < 0:
            raise ConfigError(f"train_union_queries must be >= 0, got {self.train_union_queries}")
        for name in ("train_structures", "eval_structures"):
            unknown = sorted(set(getattr(self, name)) - set(ALL_STRUCTURES))
            if unknown:
                raise ConfigError(f"Unknown structures in {name}: {unknown}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GenSpec":
        return _from_dict(cls, dict(data), "gen")


@dataclass
class RunConfig:
    """Everything a CLI run needs: model + generation settings + paths"""
    model: ModelConfig = field(default_factory=ModelConfig)
    gen: GenSpec = field(default_factory=GenSpec)
    paths: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "gen": self.gen.to_dict(), "paths": dict(self.paths)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = sorted(set(data) - {"model", "gen", "paths"})
        if unknown:
            raise ConfigError(f"Unknown config sections: {', '.join(unknown)}")
        return cls(
            model=ModelConfig.from_dict(data.get("model", {})),
            gen=GenSpec.from_dict(data.get("gen", {})),
            paths={k: str(v) for k, v in data.get("paths", {}).items()},
        )

    def with_overrides(self, model: Optional[dict] = None, gen: Optional[dict] = None,
                       paths: Optional[dict] = None) -> "RunConfig":
        """Return a copy with CLI flag values layered on top (None values are ignored)"""
        data = self.to_dict()
        for section, values in (("model", model), ("gen", gen), ("paths", paths)):
            for key, value in (values or {}).items():
                if value is not None:
                    data[section][key] = value
        return RunConfig.from_dict(data)

    def save(self, out_dir: Path) -> Path:
        """Echo the effective config into an output directory"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / OUTPUT_FILES["config"]
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def load_run_config(path: Optional[str]) -> RunConfig:
    """
    Load a RunConfig from a TOML or JSON file
    Arguments:
        path: config file, or None for the defaults
    Returns:
        RunConfig
    """
    if path is None:
        return RunConfig()

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file {path} does not exist")

    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Could not parse {path}: {e}")

    return RunConfig.from_dict(data)
