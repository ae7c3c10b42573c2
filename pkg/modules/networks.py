"""
Small feed-forward nets used by the logical operators
"""
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .autodiff import Node, Param, Tape
from .config import ATTENTION_KINDS, ModelConfig


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    scale = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-scale, scale, size=(fan_in, fan_out))


@dataclass(eq=False)
class MLP:
    """Two layers with a ReLU between them: relu(x W1 + b1) W2 + b2"""
    name: str
    w1: Param
    b1: Param
    w2: Param
    b2: Param

    @classmethod
    def create(cls, name: str, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator) -> "MLP":
        return cls(
            name=name,
            w1=Param(f"{name}.w1", glorot(rng, in_dim, hidden)),
            b1=Param(f"{name}.b1", np.zeros(hidden)),
            w2=Param(f"{name}.w2", glorot(rng, hidden, out_dim)),
            b2=Param(f"{name}.b2", np.zeros(out_dim)),
        )

    def __call__(self, tape: Tape, x: Node) -> Node:
        hidden = tape.relu(tape.add_bias(tape.matmul(x, tape.param(self.w1)), tape.param(self.b1)))
        return tape.add_bias(tape.matmul(hidden, tape.param(self.w2)), tape.param(self.b2))

    def params(self) -> List[Param]:
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]


@dataclass(eq=False)
class OperatorNets:
    """
    projection: (F+1)d -> h -> (F+1)d
    negation:   (F+1)d -> d -> Fd
    attention:  per operator kind, one 2d -> d -> d net per feature part
    Separate per-part nets are intended: adding a feature part adds exactly
    (n+m)d + 2hd + 3d^2 weights to the tables, projection and intersection attention
    (the logic slot drops out of every input when the logic part is ablated)
    """
    projection: MLP
    negation: MLP
    attention: Dict[str, List[MLP]]

    @classmethod
    def create(cls, config: ModelConfig, rng: np.random.Generator) -> "OperatorNets":
        d, F = config.dim, config.feature_parts
        width = F * d + config.logic_dim
        projection = MLP.create("projection", width, config.h, width, rng)
        negation = MLP.create("negation", width, d, F * d, rng)
        attention = {
            kind: [MLP.create(f"attention.{kind}.{j}", d + config.logic_dim, d, d, rng) for j in range(F)]
            for kind in ATTENTION_KINDS
        }
        return cls(projection, negation, attention)

    def params(self) -> List[Param]:
        out = self.projection.params() + self.negation.params()
        for kind in ATTENTION_KINDS:
            for net in self.attention[kind]:
                out.extend(net.params())
        return out
