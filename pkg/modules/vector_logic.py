"""
Many-valued two-dimensional vector logic, applied elementwise to logic parts

Each connective works on plain truth vectors (numpy, validated and settled into
[0, 1]) and, unchanged, on autodiff Nodes, where the same formulas are recorded
on the tape. The Kronecker/matrix form of the calculus is kept only as an
oracle for tests (MatrixLogic).
"""
from functools import reduce
from typing import Sequence

import numpy as np

from .autodiff import Node
from .config import ROUNDOFF_TOLERANCE
from .errors import LogicRangeError, ShapeError


def as_truth(values) -> np.ndarray:
    """Validate a truth vector: float64, every entry in [0, 1]"""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise LogicRangeError(f"truth values must lie in [0, 1], got {arr.tolist()}")
    return arr


def _settle(arr: np.ndarray) -> np.ndarray:
    # clip only float round-off, anything bigger is a bug upstream
    deviation = max(0.0 - float(arr.min(initial=0.0)), float(arr.max(initial=1.0)) - 1.0)
    if deviation > ROUNDOFF_TOLERANCE:
        raise LogicRangeError(f"connective left [0, 1] by {deviation:.3e}")
    return np.clip(arr, 0.0, 1.0)


def _is_node(x) -> bool:
    return isinstance(x, Node)


def _prepare(inputs: Sequence, minimum: int, name: str):
    inputs = list(inputs)
    if len(inputs) < minimum:
        raise ValueError(f"{name} needs at least {minimum} inputs, got {len(inputs)}")
    if any(_is_node(x) for x in inputs):
        return inputs, True
    arrays = [as_truth(x) for x in inputs]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(name, [a.shape for a in arrays])
    return arrays, False


def _or2(a, b):
    return a + b - a * b


def vnot(a):
    """NOT(a) = 1 - a"""
    if _is_node(a):
        return 1.0 - a
    return _settle(1.0 - as_truth(a))


def vand(inputs: Sequence):
    """n-ary AND: elementwise product"""
    xs, on_tape = _prepare(inputs, 2, "vand")
    out = reduce(lambda a, b: a * b, xs)
    return out if on_tape else _settle(out)


def vor(inputs: Sequence):
    """n-ary OR: inclusion-exclusion, computed as a left fold of a + b - ab"""
    xs, on_tape = _prepare(inputs, 2, "vor")
    out = reduce(_or2, xs)
    return out if on_tape else _settle(out)


def vimpl(a, b):
    """IMPL(a, b) = 1 - a(1 - b)"""
    (a, b), on_tape = _prepare([a, b], 2, "vimpl")
    out = 1.0 - a * (1.0 - b)
    return out if on_tape else _settle(out)


def vxor(a, b):
    """XOR(a, b) = a + b - 2ab"""
    (a, b), on_tape = _prepare([a, b], 2, "vxor")
    out = a + b - 2.0 * (a * b)
    return out if on_tape else _settle(out)


def vmin(inputs: Sequence):
    xs, on_tape = _prepare(inputs, 1, "vmin")
    if on_tape:
        return reduce(lambda a, b: a.tape.minimum(a, b), xs)
    return reduce(np.minimum, xs)


def vmax(inputs: Sequence):
    xs, on_tape = _prepare(inputs, 1, "vmax")
    if on_tape:
        return reduce(lambda a, b: a.tape.maximum(a, b), xs)
    return reduce(np.maximum, xs)


CONNECTIVES = {
    "not": lambda xs: vnot(xs[0]),
    "and": vand,
    "or": vor,
    "impl": lambda xs: vimpl(xs[0], xs[1]),
    "xor": lambda xs: vxor(xs[0], xs[1]),
    "min": vmin,
    "max": vmax,
}

CONNECTIVE_ARITY = {"not": (1, 1), "and": (2, None), "or": (2, None), "impl": (2, 2),
                    "xor": (2, 2), "min": (1, None), "max": (1, None)}


def apply_connective(name: str, inputs: Sequence) -> np.ndarray:
    """Dispatch a connective by name on literal truth vectors"""
    if name not in CONNECTIVES:
        raise ValueError(f"Unknown connective {name!r}, expected one of {sorted(CONNECTIVES)}")
    low, high = CONNECTIVE_ARITY[name]
    if len(inputs) < low or (high is not None and len(inputs) > high):
        expected = f"at least {low}" if high is None else f"exactly {low}" if high == low else f"{low}-{high}"
        raise ValueError(f"{name} takes {expected} inputs, got {len(inputs)}")
    return CONNECTIVES[name](list(inputs))


class MatrixLogic:
    """
    Vector logic in its matrix form over true/false basis vectors s, n
    Used as an oracle for the scalar formulas; never on the hot path
    """

    def __init__(self, dim: int = 2):
        if dim < 2:
            raise ValueError("truth space needs dim >= 2")
        self.s = np.zeros(dim)
        self.s[0] = 1.0
        self.n = np.zeros(dim)
        self.n[1] = 1.0
        s, n = self.s, self.n

        def dyadic(table):
            # table maps (left, right) basis pair -> output basis vector
            return sum(np.outer(out, np.kron(a, b)) for (a, b), out in table)

        self.I = np.outer(s, s) + np.outer(n, n)
        self.N = np.outer(n, s) + np.outer(s, n)
        self.C = dyadic([((s, s), s), ((s, n), n), ((n, s), n), ((n, n), n)])
        self.D = dyadic([((s, s), s), ((s, n), s), ((n, s), s), ((n, n), n)])
        self.L = dyadic([((s, s), s), ((s, n), n), ((n, s), s), ((n, n), s)])
        self.X = dyadic([((s, s), n), ((s, n), s), ((n, s), s), ((n, n), n)])

    def vector(self, alpha: float) -> np.ndarray:
        """alpha * s + (1 - alpha) * n"""
        return alpha * self.s + (1.0 - alpha) * self.n

    def truth(self, name: str, alpha: float, beta: float = 0.0) -> float:
        """s^T Op u (monadic) or s^T Op (u kron v) (dyadic)"""
        u = self.vector(alpha)
        if name == "not":
            return float(self.s @ self.N @ u)
        if name == "identity":
            return float(self.s @ self.I @ u)
        matrix = {"and": self.C, "or": self.D, "impl": self.L, "xor": self.X}[name]
        return float(self.s @ matrix @ np.kron(u, self.vector(beta)))
