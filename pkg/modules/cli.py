"""
Command-line interface: gen, train, eval, answer, oracle, trace, op, summary

Results go to stdout as JSON, logs go to stderr.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import (APP_DESCRIPTION, APP_NAME, APP_VERSION, CURRICULA, OUTPUT_FILES, RunConfig,
                     load_run_config)
from .dataset_gen import generate_dataset
from .embeddings import load_checkpoint
from .errors import ConfigError, FlexError
from .evaluation import (evaluate_split, multi_seed_summary, query_distances, score_histogram,
                         simulate_random_baseline, trace_intermediate)
from .kg_store import load_splits
from .query_model import find_query_file, load_records, oracle_answer, parse_query
from .report_export import ReportExporter
from .training import train
from .vector_logic import CONNECTIVES, apply_connective

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INTERRUPTED = 130

# flag dest -> ModelConfig field
MODEL_FLAGS = {
    "dim": "dim", "feature_parts": "feature_parts", "L": "L", "hidden": "hidden",
    "intersection": "intersection_variant", "union": "union_variant",
    "dnf_aggregator": "dnf_aggregator", "attention": "attention", "logic_reduction": "logic_reduction",
    "gamma": "gamma", "lr": "lr", "batch_size": "batch_size", "negatives": "negatives",
    "steps": "steps", "log_every": "log_every", "checkpoint_every": "checkpoint_every",
}

# flag dest -> GenSpec field
GEN_FLAGS = {
    "entities": "n_entities", "relations": "n_relations", "train_edges": "train_edges",
    "valid_edges": "valid_edges", "test_edges": "test_edges", "train_queries": "train_queries",
    "eval_queries": "eval_queries", "negation_ratio": "negation_ratio",
    "union_queries": "train_union_queries", "answer_cap": "answer_cap",
}


def _emit(document):
    print(json.dumps(document, indent=2, sort_keys=True))


def _effective_config(args, model=None, **settings) -> dict:
    """Settings a read-only command actually ran with, echoed next to its result"""
    return {
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config_file": getattr(args, "config", None),
        "model": model.config.to_dict() if model is not None else None,
        **settings,
    }


def _add_model_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("model")
    group.add_argument("--dim", type=int)
    group.add_argument("--feature-parts", type=int)
    group.add_argument("--L", help="feature boundary, or 'inf'")
    group.add_argument("--hidden", type=int)
    group.add_argument("--intersection", choices=["product", "min"])
    group.add_argument("--union", choices=["incl-excl", "max"])
    group.add_argument("--dnf-aggregator", choices=["vector-or", "min"])
    group.add_argument("--attention", choices=["dimension", "scalar"])
    group.add_argument("--logic-reduction", choices=["sum", "mean"])
    group.add_argument("--ablate-logic", action="store_true", default=None)
    group.add_argument("--trainable-union", action="store_true", default=None)
    group.add_argument("--structures", help=f"curriculum ({', '.join(CURRICULA)}) or comma-separated tags")
    group.add_argument("--gamma", type=float)
    group.add_argument("--lr", type=float)
    group.add_argument("--batch-size", type=int)
    group.add_argument("--negatives", type=int)
    group.add_argument("--steps", type=int)
    group.add_argument("--log-every", type=int)
    group.add_argument("--checkpoint-every", type=int)


def _model_overrides(args) -> dict:
    overrides = {field: getattr(args, flag) for flag, field in MODEL_FLAGS.items()}
    overrides["ablate_logic"] = args.ablate_logic
    overrides["trainable_union"] = args.trainable_union
    if args.structures:
        structures = args.structures
        overrides["train_structures"] = structures if structures in CURRICULA else structures.split(",")
    overrides["seed"] = getattr(args, "seed", None)
    return overrides


def _run_config(args, model: Optional[dict] = None, gen: Optional[dict] = None) -> RunConfig:
    return load_run_config(getattr(args, "config", None)).with_overrides(model=model, gen=gen)


def build_parser() -> argparse.ArgumentParser:
    # --seed and --config are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every random stream")
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML or JSON run config")

    parser = argparse.ArgumentParser(prog=APP_NAME, description=APP_DESCRIPTION, parents=[common])
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, **kwargs) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], **kwargs)

    gen = add("gen", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True)
    for flag in ("entities", "relations", "train-edges", "valid-edges", "test-edges",
                 "train-queries", "eval-queries", "union-queries", "answer-cap"):
        gen.add_argument(f"--{flag}", type=int)
    gen.add_argument("--negation-ratio", type=float)
    gen.set_defaults(handler=cmd_gen)

    train = add("train", help="train a model")
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--resume", help="checkpoint to continue from")
    train.add_argument("--progress", action="store_true")
    _add_model_flags(train)
    train.set_defaults(handler=cmd_train)

    ev = add("eval", help="filtered ranking on a split")
    ev.add_argument("--data", required=True)
    ev.add_argument("--model", required=True)
    ev.add_argument("--split", choices=["valid", "test"], default="test")
    ev.add_argument("--threads", type=int, default=1)
    ev.add_argument("--out", help="also write report.json / report.csv here")
    ev.add_argument("--xlsx", action="store_true", help="also write report.xlsx (needs --out)")
    ev.add_argument("--baseline", action="store_true", help="add the simulated random baseline")
    ev.add_argument("--progress", action="store_true")
    ev.set_defaults(handler=cmd_eval)

    answer = add("answer", help="rank entities for one query")
    answer.add_argument("--model", required=True)
    answer.add_argument("--query", required=True)
    answer.add_argument("--top", type=int, default=10)
    answer.set_defaults(handler=cmd_answer)

    oracle = add("oracle", help="exact answers of one query")
    oracle.add_argument("--data", required=True)
    oracle.add_argument("--query", required=True)
    oracle.add_argument("--split", choices=["train", "valid", "test"], default="test")
    oracle.set_defaults(handler=cmd_oracle)

    trace = add("trace", help="top entities at every node of a query")
    trace.add_argument("--model", required=True)
    trace.add_argument("--query", required=True)
    trace.add_argument("--top", type=int, default=10)
    trace.add_argument("--histogram", action="store_true", help="score histogram of answers vs non-answers")
    trace.add_argument("--data", help="dataset for the histogram's answer set")
    trace.add_argument("--split", choices=["train", "valid", "test"], default="test")
    trace.add_argument("--bins", type=int, default=10)
    trace.set_defaults(handler=cmd_trace)

    op = add("op", help="apply a vector-logic connective to literal truth vectors")
    op.add_argument("connective", choices=sorted(CONNECTIVES))
    op.add_argument("vectors", nargs="+", help="comma-separated truth values, e.g. 0.5,1,0")
    op.set_defaults(handler=cmd_op)

    summary = add("summary", help="train and evaluate over several seeds")
    summary.add_argument("--data", required=True)
    summary.add_argument("--seeds", required=True, help="comma-separated seeds")
    summary.add_argument("--split", choices=["valid", "test"], default="test")
    summary.add_argument("--threads", type=int, default=1)
    summary.add_argument("--out")
    summary.add_argument("--xlsx", action="store_true")
    _add_model_flags(summary)
    summary.set_defaults(handler=cmd_summary)
    return parser


# ---------------------------------------------------------------- commands

def _load_query_records(data_dir, which: str, splits):
    path = find_query_file(data_dir, which)
    if path is None:
        raise ConfigError(f"No {which} query file in {data_dir}")
    return load_records(path, splits[which])


def cmd_gen(args) -> int:
    overrides = {field: getattr(args, flag) for flag, field in GEN_FLAGS.items()}
    overrides["seed"] = getattr(args, "seed", None)
    run = _run_config(args, gen=overrides)
    splits, records = generate_dataset(run.gen, args.out)
    run.save(Path(args.out))
    _emit({
        "out": str(args.out),
        "entities": len(splits.entities),
        "relations": len(splits.relations),
        "triples": {which: len(splits[which]) for which in ("train", "valid", "test")},
        "queries": {which: len(r) for which, r in records.items()},
    })
    return EXIT_OK


def cmd_train(args) -> int:
    run = _run_config(args, model=_model_overrides(args))
    out = Path(args.out)
    run.paths.update({"data": str(args.data), "out": str(out)})
    run.save(out)

    splits = load_splits(args.data)
    records = _load_query_records(args.data, "train", splits)
    result = train(records, splits.train, run.model, out_dir=out, resume_from=args.resume, progress=args.progress)
    _emit({
        "final": str(out / OUTPUT_FILES["final"]),
        "steps": result.steps,
        "final_loss": result.losses[-1] if result.losses else None,
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    splits = load_splits(args.data)
    model = load_checkpoint(args.model, splits.test).model
    records = _load_query_records(args.data, args.split, splits)
    report = evaluate_split(model, records, splits, args.split, threads=args.threads, progress=args.progress)

    seed = getattr(args, "seed", None) or 0
    effective = _effective_config(args, model, data=str(args.data), checkpoint=str(args.model), split=args.split,
                                  threads=args.threads, baseline=args.baseline, baseline_seed=seed)
    document = {"split": args.split, "model": str(args.model), **report.to_dict(), "effective_config": effective}
    if args.baseline:
        document["random_baseline"] = simulate_random_baseline(records, splits[args.split], seed=seed).metrics()

    if args.out:
        exporter = ReportExporter(Path(args.out))
        exporter.save_json(effective, OUTPUT_FILES["config"])
        exporter.save_json(document)
        exporter.save_csv(report.to_frame())
        if args.xlsx:
            exporter.save_xlsx({"metrics": report.table().rename_axis("structure").reset_index(),
                                "long": report.to_frame()},
                               summary={"Split": args.split, "Model": str(args.model),
                                        "Skipped queries": report.skipped})
    elif args.xlsx:
        raise ConfigError("--xlsx needs --out")
    _emit(document)
    return EXIT_OK


def cmd_answer(args) -> int:
    model = load_checkpoint(args.model).model
    kg = model.graph()
    q = parse_query(args.query, kg)
    distances = query_distances(model, q)
    order = distances.argsort(kind="stable")[: args.top]
    _emit({
        "query": args.query,
        "ranked": [{"entity": kg.entities.name(int(e)), "score": float(-distances[e])} for e in order],
        "effective_config": _effective_config(args, model, checkpoint=str(args.model), top=args.top),
    })
    return EXIT_OK


def cmd_oracle(args) -> int:
    splits = load_splits(args.data)
    kg = splits[args.split]
    answers = oracle_answer(kg, parse_query(args.query, kg))
    _emit({
        "query": args.query,
        "answers": sorted(kg.entities.name(e) for e in answers),
        "effective_config": _effective_config(args, data=str(args.data), split=args.split),
    })
    return EXIT_OK


def cmd_trace(args) -> int:
    model = load_checkpoint(args.model).model
    kg = model.graph()
    q = parse_query(args.query, kg)
    document = {
        "query": args.query,
        "nodes": [e.to_dict(kg) for e in trace_intermediate(model, q, args.top)],
        "effective_config": _effective_config(args, model, checkpoint=str(args.model), top=args.top,
                                              histogram=args.histogram, data=args.data, split=args.split,
                                              bins=args.bins),
    }
    if args.histogram:
        if not args.data:
            raise ConfigError("--histogram needs --data for the answer set")
        splits = load_splits(args.data)
        model.check_vocabularies(splits[args.split])
        answers = oracle_answer(splits[args.split], q)
        document["histogram"] = score_histogram(model, q, sorted(answers), bins=args.bins).to_dict(orient="records")
    _emit(document)
    return EXIT_OK


def _parse_vector(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Truth vector must be comma-separated numbers, got {text!r}")


def cmd_op(args) -> int:
    result = apply_connective(args.connective, [_parse_vector(v) for v in args.vectors])
    _emit({"connective": args.connective, "result": [float(v) for v in result],
           "effective_config": _effective_config(args, inputs=list(args.vectors))})
    return EXIT_OK


def cmd_summary(args) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}")
    run = _run_config(args, model=_model_overrides(args))
    splits = load_splits(args.data)
    train_records = _load_query_records(args.data, "train", splits)
    eval_records = _load_query_records(args.data, args.split, splits)
    result = multi_seed_summary(run.model, seeds, train_records, eval_records, splits, args.split,
                                threads=args.threads)

    if args.out:
        out = Path(args.out)
        run.save(out)
        exporter = ReportExporter(out)
        exporter.save_json(result.to_dict(), OUTPUT_FILES["summary"])
        if args.xlsx:
            exporter.save_xlsx({"summary": result.summary, "per_seed": result.rows}, "summary.xlsx",
                               summary={"Seeds": ", ".join(map(str, seeds)), "Split": args.split})
    _emit(result.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------- entry

def dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Parse argv and run one subcommand
    Returns:
        0 on success, 1 on a runtime failure, 2 on a usage error, 130 on Ctrl-C
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return EXIT_INTERRUPTED
    except (FlexError, OSError, ValueError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
