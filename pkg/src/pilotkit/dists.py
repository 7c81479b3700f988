"""Parametric distributions used for queue waits, task durations and data sizes."""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping, Union

from .errors import InvalidDescription

KINDS = ("CONSTANT", "UNIFORM", "EXP")


@dataclass(frozen=True)
class Distribution:
    kind: str
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidDescription(f"unknown distribution {self.kind!r}")
        if self.a < 0 or self.b < 0:
            raise InvalidDescription("distribution parameters must be >= 0")
        if self.kind == "UNIFORM" and self.b < self.a:
            raise InvalidDescription("UNIFORM needs low <= high")

    @classmethod
    def constant(cls, value: float) -> "Distribution":
        return cls("CONSTANT", float(value))

    @classmethod
    def uniform(cls, low: float, high: float) -> "Distribution":
        return cls("UNIFORM", float(low), float(high))

    @classmethod
    def exp(cls, mean: float) -> "Distribution":
        return cls("EXP", float(mean))

    @classmethod
    def parse(cls, value: Union[float, int, Mapping, "Distribution"]) -> "Distribution":
        """Accept a bare number (constant) or ``{"dist": KIND, ...}``."""
        if isinstance(value, Distribution):
            return value
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return cls.constant(value)
        if not isinstance(value, Mapping):
            raise InvalidDescription(f"cannot parse distribution from {value!r}")
        kind = str(value.get("dist", "")).upper()
        try:
            if kind == "CONSTANT":
                return cls.constant(value["value"])
            if kind == "UNIFORM":
                return cls.uniform(value["low"], value["high"])
            if kind == "EXP":
                return cls.exp(value["mean"])
        except KeyError as exc:
            raise InvalidDescription(f"{kind} distribution lacks {exc}") from None
        raise InvalidDescription(f"unknown distribution {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "CONSTANT":
            return {"dist": "CONSTANT", "value": self.a}
        if self.kind == "UNIFORM":
            return {"dist": "UNIFORM", "low": self.a, "high": self.b}
        return {"dist": "EXP", "mean": self.a}

    @property
    def mean(self) -> float:
        if self.kind == "UNIFORM":
            return (self.a + self.b) / 2
        return self.a

    def sample(self, rng: random.Random) -> float:
        # CONSTANT draws nothing so that a constant parameter never shifts
        # the stream seen by later draws.
        if self.kind == "CONSTANT":
            return self.a
        if self.kind == "UNIFORM":
            return rng.uniform(self.a, self.b)
        if self.a == 0:
            return 0.0
        return rng.expovariate(1.0 / self.a)
