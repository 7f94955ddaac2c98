"""Loop-structured frame sampling.

A sequence walks forward through the source clip at a fixed stride ``s`` for
``f`` frames, then returns to frame 0 along a random path of ``f - 1`` steps
drawn from a small stride set. Return paths are sampled exactly uniformly
over all admissible compositions by unranking a single uniform integer
against a dynamic-programming count table.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError

DEFAULT_STRIDES = (2, 4, 6, 8)


@dataclass(frozen=True)
class AlssConfig:
    s: int = 6
    f: int = 8
    allowed_strides: tuple = DEFAULT_STRIDES

    def __post_init__(self):
        if self.s < 1:
            raise ParameterError(f"forward stride must be >= 1, got {self.s}")
        if self.f < 2:
            raise ParameterError(f"forward frame count must be >= 2, got {self.f}")
        strides = tuple(sorted(set(int(d) for d in self.allowed_strides)))
        if not strides or any(d <= 0 or d % 2 for d in strides):
            raise ParameterError(f"strides must be positive even integers, got {self.allowed_strides}")
        object.__setattr__(self, "allowed_strides", strides)

    @property
    def span(self) -> int:
        """Offset of the turning frame."""
        return self.s * (self.f - 1)

    @property
    def length(self) -> int:
        return 2 * self.f - 1


@dataclass(frozen=True)
class AlssSequence:
    indices: tuple
    f: int

    @property
    def turning_index(self) -> int:
        return self.f - 1

    def __len__(self):
        return len(self.indices)


@lru_cache(maxsize=64)
def _count_table(parts: int, total: int, allowed: tuple) -> tuple:
    # table[k][n] = ordered k-tuples from `allowed` summing to n
    table = [[0] * (total + 1) for _ in range(parts + 1)]
    table[0][0] = 1
    for k in range(1, parts + 1):
        prev, row = table[k - 1], table[k]
        for n in range(total + 1):
            row[n] = sum(prev[n - d] for d in allowed if d <= n)
    return tuple(tuple(row) for row in table)


def count_compositions(total: int, parts: int, allowed=DEFAULT_STRIDES) -> int:
    """Number of ordered ``parts``-tuples drawn from ``allowed`` summing to ``total``."""
    if parts < 0:
        raise ParameterError("parts must be non-negative")
    if total < 0:
        return 0
    allowed = tuple(sorted(set(allowed)))
    return _count_table(parts, total, allowed)[parts][total]


def _randbelow(rng: np.random.Generator, n: int) -> int:
    if n < 2**63:
        return int(rng.integers(n))
    nbytes = (n.bit_length() + 7) // 8
    while True:
        u = int.from_bytes(rng.bytes(nbytes), "little") >> (8 * nbytes - n.bit_length())
        if u < n:
            return u


def unrank_composition(rank: int, total: int, parts: int, allowed=DEFAULT_STRIDES) -> list:
    """The ``rank``-th composition in lexicographic order of strides."""
    allowed = tuple(sorted(set(allowed)))
    table = _count_table(parts, total, allowed)
    if not 0 <= rank < table[parts][total]:
        raise ParameterError(f"rank {rank} out of range")
    out, remaining = [], total
    for k in range(parts, 0, -1):
        for d in allowed:
            if d > remaining:
                break
            c = table[k - 1][remaining - d]
            if rank < c:
                out.append(d)
                remaining -= d
                break
            rank -= c
    return out


def sample_reverse_strides(cfg: AlssConfig, rng: np.random.Generator) -> list:
    """Draw a return path uniformly over all valid compositions of ``cfg.span``."""
    n = count_compositions(cfg.span, cfg.f - 1, cfg.allowed_strides)
    if n == 0:
        raise ParameterError(
            f"no composition of {cfg.span} into {cfg.f - 1} parts from {cfg.allowed_strides}"
        )
    return unrank_composition(_randbelow(rng, n), cfg.span, cfg.f - 1, cfg.allowed_strides)


def build_sequence(cfg: AlssConfig, strides) -> AlssSequence:
    strides = [int(d) for d in strides]
    if len(strides) != cfg.f - 1:
        raise ParameterError(f"need {cfg.f - 1} reverse strides, got {len(strides)}")
    if sum(strides) != cfg.span:
        raise ParameterError(f"reverse strides sum to {sum(strides)}, expected {cfg.span}")
    bad = [d for d in strides if d not in cfg.allowed_strides]
    if bad:
        raise ParameterError(f"strides {bad} not in {cfg.allowed_strides}")
    indices = [cfg.s * i for i in range(cfg.f)]
    offset = cfg.span
    for d in strides:
        offset -= d
        indices.append(offset)
    return AlssSequence(tuple(indices), cfg.f)


def sample_sequence(cfg: AlssConfig, rng: np.random.Generator) -> AlssSequence:
    return build_sequence(cfg, sample_reverse_strides(cfg, rng))


def required_source_length(cfg: AlssConfig) -> int:
    return cfg.span + 1
