"""
Minimal dense numeric core with reverse-mode differentiation

A Tape records every primitive op in order; backward() walks the record in
exact reverse. Values are float64 numpy arrays. Only the ops the feature-logic
operators need are supported, and every shape rule is explicit (no broadcasting
beyond a python scalar against an array).
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import LOG_FLOOR, ROUNDOFF_TOLERANCE
from .errors import NonFiniteError, NotScalarError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Param:
    """
    A trainable tensor with its gradient and Adam moments
    grad, adam_m and adam_v always have the shape of value
    """
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False, repr=False)
    adam_m: np.ndarray = field(init=False, repr=False)
    adam_v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self):
        self.grad.fill(0.0)


class Node:
    """One recorded value on a tape"""

    __slots__ = ("tape", "op", "inputs", "attrs", "value", "grad", "param")

    def __init__(self, tape, op, inputs, attrs, value, param=None):
        self.tape = tape
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.grad = None
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}, shape={self.value.shape})"

    # Arithmetic sugar so the vector-logic connectives run unchanged on nodes
    def __add__(self, other):
        if isinstance(other, Node):
            return self.tape.forward("add", self, other)
        return self.tape.forward("add_scalar", self, c=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Node):
            return self.tape.forward("sub", self, other)
        return self.tape.forward("add_scalar", self, c=-float(other))

    def __rsub__(self, other):
        negated = self.tape.forward("scalar_mul", self, c=-1.0)
        return self.tape.forward("add_scalar", negated, c=float(other))

    def __mul__(self, other):
        if isinstance(other, Node):
            return self.tape.forward("mul", self, other)
        return self.tape.forward("scalar_mul", self, c=float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.forward("scalar_mul", self, c=-1.0)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(op, [a.shape, b.shape])


def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


# Forward functions: (values, attrs) -> array

def _fwd_add(v, a):
    _same_shape("add", v[0], v[1])
    return v[0] + v[1]


def _fwd_sub(v, a):
    _same_shape("sub", v[0], v[1])
    return v[0] - v[1]


def _fwd_mul(v, a):
    _same_shape("mul", v[0], v[1])
    return v[0] * v[1]


def _fwd_matmul(v, a):
    x, w = v
    if w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[0]:
        raise ShapeError("matmul", [x.shape, w.shape])
    return x @ w


def _fwd_add_bias(v, a):
    x, b = v
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError("add_bias", [x.shape, b.shape])
    return x + b


def _fwd_concat(v, a):
    lead = {x.shape[:-1] for x in v}
    if len(lead) != 1:
        raise ShapeError("concat", [x.shape for x in v])
    return np.concatenate(v, axis=-1)


def _fwd_slice(v, a):
    x = v[0]
    if not 0 <= a["start"] < a["stop"] <= x.shape[-1]:
        raise ShapeError("slice", [x.shape, (a["start"], a["stop"])])
    return x[..., a["start"]:a["stop"]].copy()


def _fwd_stack(v, a):
    if len({x.shape for x in v}) != 1:
        raise ShapeError("stack", [x.shape for x in v])
    return np.stack(v, axis=0)


def _fwd_softmax_group(v, a):
    x = v[0]
    if x.ndim < 2:
        raise ShapeError("softmax_group", [x.shape])
    shifted = x - x.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def _fwd_min(v, a):
    _same_shape("min", v[0], v[1])
    return np.where(v[0] <= v[1], v[0], v[1])


def _fwd_max(v, a):
    _same_shape("max", v[0], v[1])
    return np.where(v[0] >= v[1], v[0], v[1])


def _fwd_sum(v, a):
    axis = a.get("axis")
    x = v[0]
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise ShapeError("sum", [x.shape, axis])
    return np.asarray(x.sum(axis=axis), dtype=np.float64)


def _fwd_log(v, a):
    x = v[0]
    if np.any(x < -ROUNDOFF_TOLERANCE):
        raise NonFiniteError("log")
    return np.log(np.maximum(x, LOG_FLOOR))


def _fwd_gather(v, a):
    table = v[0]
    ids = a["ids"]
    if table.ndim != 2 or ids.ndim != 1:
        raise ShapeError("gather", [table.shape, ids.shape])
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("gather", [table.shape, (int(ids.min()), int(ids.max()))])
    return table[ids]


def _fwd_repeat_rows(v, a):
    if v[0].ndim != 2:
        raise ShapeError("repeat_rows", [v[0].shape])
    return np.repeat(v[0], a["k"], axis=0)


def _fwd_reshape(v, a):
    x = v[0]
    if int(np.prod(a["shape"])) != x.size:
        raise ShapeError("reshape", [x.shape, a["shape"]])
    return x.reshape(a["shape"])


# Backward functions: (grad, values, out, attrs) -> tuple of input grads

def _bwd_matmul(g, v, out, a):
    x, w = v
    if x.ndim == 1:
        return g @ w.T, np.outer(x, g)
    return g @ w.T, x.T @ g


def _bwd_concat(g, v, out, a):
    grads, offset = [], 0
    for x in v:
        width = x.shape[-1]
        grads.append(g[..., offset:offset + width])
        offset += width
    return tuple(grads)


def _bwd_slice(g, v, out, a):
    full = np.zeros_like(v[0])
    full[..., a["start"]:a["stop"]] = g
    return (full,)


def _bwd_softmax_group(g, v, out, a):
    return (out * (g - (g * out).sum(axis=0, keepdims=True)),)


def _bwd_min(g, v, out, a):
    first = v[0] <= v[1]
    return np.where(first, g, 0.0), np.where(first, 0.0, g)


def _bwd_max(g, v, out, a):
    first = v[0] >= v[1]
    return np.where(first, g, 0.0), np.where(first, 0.0, g)


def _bwd_sum(g, v, out, a):
    axis = a.get("axis")
    if axis is None:
        return (np.full_like(v[0], float(g)),)
    return (np.broadcast_to(np.expand_dims(g, axis), v[0].shape).copy(),)


def _bwd_log(g, v, out, a):
    x = v[0]
    safe = np.maximum(x, LOG_FLOOR)
    return (np.where(x >= LOG_FLOOR, g / safe, 0.0),)


def _bwd_gather(g, v, out, a):
    full = np.zeros_like(v[0])
    np.add.at(full, a["ids"], g)
    return (full,)


def _bwd_repeat_rows(g, v, out, a):
    rows, cols = v[0].shape
    return (g.reshape(rows, a["k"], cols).sum(axis=1),)


OPS: Dict[str, tuple] = {
    "add": (_fwd_add, lambda g, v, o, a: (g, g)),
    "sub": (_fwd_sub, lambda g, v, o, a: (g, -g)),
    "mul": (_fwd_mul, lambda g, v, o, a: (g * v[1], g * v[0])),
    "scalar_mul": (lambda v, a: v[0] * a["c"], lambda g, v, o, a: (g * a["c"],)),
    "add_scalar": (lambda v, a: v[0] + a["c"], lambda g, v, o, a: (g,)),
    "matmul": (_fwd_matmul, _bwd_matmul),
    "add_bias": (_fwd_add_bias, lambda g, v, o, a: (g, g.sum(axis=0))),
    "concat": (_fwd_concat, _bwd_concat),
    "slice": (_fwd_slice, _bwd_slice),
    "stack": (_fwd_stack, lambda g, v, o, a: tuple(g[i] for i in range(len(v)))),
    "tanh": (lambda v, a: np.tanh(v[0]), lambda g, v, o, a: (g * (1.0 - o * o),)),
    "sigmoid": (lambda v, a: _sigmoid(v[0]), lambda g, v, o, a: (g * o * (1.0 - o),)),
    "relu": (lambda v, a: np.maximum(v[0], 0.0), lambda g, v, o, a: (np.where(v[0] > 0, g, 0.0),)),
    "exp": (lambda v, a: np.exp(v[0]), lambda g, v, o, a: (g * o,)),
    "log": (_fwd_log, _bwd_log),
    # log(sigmoid(x)) = -softplus(-x), finite for any finite x
    "logsigmoid": (lambda v, a: -np.logaddexp(0.0, -v[0]), lambda g, v, o, a: (g * _sigmoid(-v[0]),)),
    "softmax_group": (_fwd_softmax_group, _bwd_softmax_group),
    "min": (_fwd_min, _bwd_min),
    "max": (_fwd_max, _bwd_max),
    "sum": (_fwd_sum, _bwd_sum),
    # sign(0) == 0, so the subgradient of |x| at 0 is 0
    "abs": (lambda v, a: np.abs(v[0]), lambda g, v, o, a: (g * np.sign(v[0]),)),
    "gather": (_fwd_gather, _bwd_gather),
    "repeat_rows": (_fwd_repeat_rows, _bwd_repeat_rows),
    "reshape": (_fwd_reshape, lambda g, v, o, a: (g.reshape(v[0].shape),)),
}

OP_KINDS = frozenset(OPS)


class Tape:
    """
    Ordered record of primitive ops
    Build it on one thread; Params are only read until backward() runs
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self._param_nodes: Dict[int, Node] = {}

    def __len__(self):
        return len(self.nodes)

    def param(self, p: Param) -> Node:
        """Leaf node reading a Param; one leaf per Param per tape"""
        node = self._param_nodes.get(id(p))
        if node is None:
            node = Node(self, "param", (), {}, p.value, param=p)
            self.nodes.append(node)
            self._param_nodes[id(p)] = node
        return node

    def constant(self, value) -> Node:
        """Leaf node with no gradient path"""
        node = Node(self, "const", (), {}, np.asarray(value, dtype=np.float64))
        self.nodes.append(node)
        return node

    def forward(self, op_kind: str, *inputs: Node, **attrs) -> Node:
        """
        Record one primitive op
        Arguments:
            op_kind: a key of OPS
            inputs: operand nodes on this tape
            attrs: op parameters (axis, c, ids, start/stop, k, shape)
        Returns:
            the output node
        """
        if op_kind not in OPS:
            raise ValueError(f"Unknown op kind {op_kind!r}")
        for node in inputs:
            if node.tape is not self:
                raise ValueError(f"{op_kind}: input node belongs to another tape")

        if "ids" in attrs:
            attrs["ids"] = np.asarray(attrs["ids"], dtype=np.int64)

        fwd, _ = OPS[op_kind]
        value = np.asarray(fwd([n.value for n in inputs], attrs), dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(op_kind)

        node = Node(self, op_kind, inputs, attrs, value)
        self.nodes.append(node)
        return node

    # Named shortcuts for the ops used outside of arithmetic sugar
    def matmul(self, x, w):
        return self.forward("matmul", x, w)

    def add_bias(self, x, b):
        return self.forward("add_bias", x, b)

    def concat(self, parts):
        return self.forward("concat", *parts)

    def slice(self, x, start, stop):
        return self.forward("slice", x, start=int(start), stop=int(stop))

    def stack(self, parts):
        return self.forward("stack", *parts)

    def softmax_group(self, x):
        return self.forward("softmax_group", x)

    def tanh(self, x):
        return self.forward("tanh", x)

    def sigmoid(self, x):
        return self.forward("sigmoid", x)

    def relu(self, x):
        return self.forward("relu", x)

    def exp(self, x):
        return self.forward("exp", x)

    def log(self, x):
        return self.forward("log", x)

    def logsigmoid(self, x):
        return self.forward("logsigmoid", x)

    def abs(self, x):
        return self.forward("abs", x)

    def minimum(self, a, b):
        return self.forward("min", a, b)

    def maximum(self, a, b):
        return self.forward("max", a, b)

    def sum(self, x, axis: Optional[int] = None):
        return self.forward("sum", x, axis=axis)

    def gather(self, table, ids):
        return self.forward("gather", table, ids=ids)

    def repeat_rows(self, x, k: int):
        return self.forward("repeat_rows", x, k=int(k))

    def reshape(self, x, shape):
        return self.forward("reshape", x, shape=tuple(int(s) for s in shape))

    def backward(self, loss: Node):
        """
        Accumulate d(loss)/d(param) into every Param reachable from loss
        Params that loss doesn't depend on keep their grad untouched
        """
        if loss.tape is not self:
            raise ValueError("loss node belongs to another tape")
        if loss.value.ndim != 0:
            raise NotScalarError(f"backward needs a scalar loss, got shape {loss.value.shape}")

        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((), dtype=np.float64)

        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            if node.op == "param":
                node.param.grad += node.grad
                continue
            if node.op == "const":
                continue
            _, bwd = OPS[node.op]
            grads = bwd(node.grad, [n.value for n in node.inputs], node.value, node.attrs)
            for child, g in zip(node.inputs, grads):
                g = np.asarray(g, dtype=np.float64)
                if child.grad is None:
                    child.grad = g.copy()
                else:
                    child.grad = child.grad + g


def scalar_value(node: Node) -> float:
    return float(node.value)


def grad_check(f: Callable[[Tape], Node], params: Sequence[Param], h: float = 1e-5) -> float:
    """
    Compare analytic gradients with central finite differences
    Arguments:
        f: builds a scalar loss on the tape it is given; must be deterministic
        params: Params to check (every entry is perturbed)
        h: finite-difference step
    Returns:
        max over entries of |analytic - numeric| / max(1, |numeric|)
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")

    for p in params:
        p.zero_grad()
    tape = Tape()
    tape.backward(f(tape))
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = scalar_value(f(Tape()))
            flat[i] = original - h
            minus = scalar_value(f(Tape()))
            flat[i] = original
            numeric = (plus - minus) / (2.0 * h)
            err = abs(flat_grad[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)

    logger.debug(f"grad_check over {sum(p.size for p in params)} entries: max rel err {worst:.3e}")
    return worst
