"""
Neural logical operators on feature-logic embeddings

Feature parts go through small nets and attention; logic parts follow the
vector-logic connectives and never read a feature part.
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from .autodiff import Node, Tape
from .embeddings import FeatureLogicEmbedding, ModelParams
from .errors import ShapeError
from .query_model import And, Anchor, Not, Or, Proj, QueryNode, shape_signature, validate
from .vector_logic import vand, vimpl, vmax, vmin, vnot, vor, vxor

logger = logging.getLogger(__name__)

LOGIC_RULES = {
    ("intersection", "product"): vand,
    ("intersection", "min"): vmin,
    ("union", "incl-excl"): vor,
    ("union", "max"): vmax,
}


def _bound(model: ModelParams, x: Node) -> Node:
    """L * tanh(x) in bounded mode, identity when L is infinite"""
    config = model.config
    if not config.bounded:
        return x
    squashed = x.tape.tanh(x)
    return squashed if config.L == 1.0 else squashed * config.L


def _embedding(model: ModelParams, features: Node, logic: Optional[Node]) -> FeatureLogicEmbedding:
    return FeatureLogicEmbedding(features, logic, model.config.feature_parts, model.config.dim)


def project(model: ModelParams, V: FeatureLogicEmbedding, relation_ids: Sequence[int]) -> FeatureLogicEmbedding:
    """
    Relation projection: g(MLP([theta_f + theta_fr; theta_l + theta_lr]))
    g is L*tanh on the feature half and sigmoid on the logic half
    Arguments:
        model: parameters
        V: batch of B input embeddings
        relation_ids: B relation ids, one per row
    Returns:
        FeatureLogicEmbedding with B rows
    """
    tape = V.tape
    if len(relation_ids) != V.batch:
        raise ShapeError("project", [V.batch, len(relation_ids)])
    rel_features, rel_logic = model.lookup_relation(tape, relation_ids)

    x = V.features + rel_features
    if V.logic is not None:
        x = tape.concat([x, V.logic + rel_logic])
    y = model.nets.projection(tape, x)

    width = model.config.feature_parts * model.config.dim
    features = _bound(model, tape.slice(y, 0, width) if V.logic is not None else y)
    logic = None
    if V.logic is not None:
        logic = tape.sigmoid(tape.slice(y, width, width + model.config.dim))
    return _embedding(model, features, logic)


def negate(model: ModelParams, V: FeatureLogicEmbedding) -> FeatureLogicEmbedding:
    """features = L*tanh(MLP([theta_f; theta_l])), logic = 1 - theta_l"""
    features = _bound(model, model.nets.negation(V.tape, V.with_logic()))
    logic = vnot(V.logic) if V.logic is not None else None
    return _embedding(model, features, logic)


def attend(model: ModelParams, kind: str, inputs: Sequence[FeatureLogicEmbedding]) -> Node:
    """
    Attention-weighted feature combination, computed per feature part
    Weights come from a dimension-wise softmax over the n inputs, so every
    output entry is a convex combination of the inputs' entries
    Returns:
        (B, F*d) features
    """
    tape = inputs[0].tape
    nets = model.nets.attention[kind]
    d = model.config.dim
    scalar = model.config.attention == "scalar"
    averager = tape.constant(np.full((d, d), 1.0 / d)) if scalar else None

    per_input_parts = [V.feature_parts() for V in inputs]
    out_parts = []
    for j, net in enumerate(nets):
        logits, values = [], []
        for V, parts in zip(inputs, per_input_parts):
            x = parts[j] if V.logic is None else tape.concat([parts[j], V.logic])
            a = net(tape, x)
            if scalar:
                # one weight per input, shared by every dimension
                a = tape.matmul(a, averager)
            logits.append(a)
            values.append(parts[j])
        weights = tape.softmax_group(tape.stack(logits))
        out_parts.append(tape.sum(weights * tape.stack(values), axis=0))
    return out_parts[0] if len(out_parts) == 1 else tape.concat(out_parts)


def _check_inputs(op: str, inputs: Sequence[FeatureLogicEmbedding], minimum: int = 2):
    if len(inputs) < minimum:
        raise ValueError(f"{op} needs at least {minimum} inputs, got {len(inputs)}")
    batches = {V.batch for V in inputs}
    if len(batches) != 1:
        raise ShapeError(op, [V.features.shape for V in inputs])


def intersect(model: ModelParams, inputs: Sequence[FeatureLogicEmbedding],
              variant: Optional[str] = None) -> FeatureLogicEmbedding:
    """
    Intersection: attention over features; logic by product (I) or min (I2)
    Arguments:
        inputs: n >= 2 embeddings with the same batch size
        variant: "product" | "min", defaults to the model config
    """
    _check_inputs("intersect", inputs)
    variant = variant or model.config.intersection_variant
    features = attend(model, "intersection", inputs)
    logic = None
    if inputs[0].logic is not None:
        logic = LOGIC_RULES[("intersection", variant)]([V.logic for V in inputs])
    return _embedding(model, features, logic)


def union(model: ModelParams, inputs: Sequence[FeatureLogicEmbedding],
          variant: Optional[str] = None) -> FeatureLogicEmbedding:
    """Union: same feature path as intersect, logic by inclusion-exclusion (U) or max (U2)"""
    _check_inputs("union", inputs)
    variant = variant or model.config.union_variant
    features = attend(model, "union", inputs)
    logic = None
    if inputs[0].logic is not None:
        logic = LOGIC_RULES[("union", variant)]([V.logic for V in inputs])
    return _embedding(model, features, logic)


def dyadic_logic(model: ModelParams, a: FeatureLogicEmbedding, b: FeatureLogicEmbedding,
                 connective: str) -> FeatureLogicEmbedding:
    """IMPL / XOR with the shared dyadic structure: attention features, vector-logic logic"""
    rules = {"impl": vimpl, "xor": vxor}
    if connective not in rules:
        raise ValueError(f"dyadic_logic supports {sorted(rules)}, got {connective!r}")
    _check_inputs(connective, [a, b])
    features = attend(model, connective, [a, b])
    logic = rules[connective](a.logic, b.logic) if a.logic is not None else None
    return _embedding(model, features, logic)


def embed_query(model: ModelParams, tape: Tape, queries: Sequence[QueryNode],
                trace: Optional[Dict[str, FeatureLogicEmbedding]] = None) -> FeatureLogicEmbedding:
    """
    Embed a batch of queries bottom-up on tape
    Arguments:
        model: parameters
        tape: tape to record on
        queries: non-empty list of queries sharing one (unsorted) shape
        trace: optional dict filled with path -> embedding for every node
    Returns:
        FeatureLogicEmbedding with one row per query
    """
    if not queries:
        raise ValueError("embed_query needs at least one query")
    signature = shape_signature(queries[0], normalize=False)
    for q in queries[1:]:
        if shape_signature(q, normalize=False) != signature:
            raise ShapeError("embed_query", [signature, shape_signature(q, normalize=False)])
    validate(queries[0])
    return _embed(model, tape, list(queries), "root", trace)


def _embed(model: ModelParams, tape: Tape, nodes: List[QueryNode], path: str,
           trace: Optional[dict]) -> FeatureLogicEmbedding:
    head = nodes[0]
    if isinstance(head, Anchor):
        out = model.lookup_entity(tape, [n.entity for n in nodes])
    elif isinstance(head, Proj):
        child = _embed(model, tape, [n.child for n in nodes], f"{path}.0", trace)
        out = project(model, child, [n.relation for n in nodes])
    elif isinstance(head, Not):
        out = negate(model, _embed(model, tape, [n.child for n in nodes], f"{path}.0", trace))
    else:
        children = [
            _embed(model, tape, [n.children[i] for n in nodes], f"{path}.{i}", trace)
            for i in range(len(head.children))
        ]
        out = intersect(model, children) if isinstance(head, And) else union(model, children)

    if trace is not None:
        trace[path] = out
    return out
