"""Deterministic numeric kernels.

Parameters travel as flat 1-D ``float64`` numpy arrays (``ParamVector``).
Random numbers come from :class:`RngStream`, a counter-based Philox
generator keyed by ``(master_seed, purpose, client, round)`` so that each
consumer owns an independent stream no matter in which order streams are
created or drained.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from fedsim.errors import (
    DimensionError,
    EmptyAggregateError,
    OracleError,
    ParameterError,
    WeightError,
)

ParamVector = np.ndarray

_U64 = (1 << 64) - 1
DEFAULT_FD_STEP = 1e-5


def param_vector(values) -> ParamVector:
    """Copy ``values`` into a fresh finite float64 vector."""
    v = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError("parameter vector contains NaN or Inf")
    return v


def check_same_length(a: ParamVector, b: ParamVector) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def l2_norm_sq(v: ParamVector) -> float:
    return float(np.sum(v * v))


def weighted_mean(vs: Sequence[ParamVector], weights: Sequence[float]) -> ParamVector:
    """Component-wise ``sum(w_k * v_k) / sum(w_k)``.

    Accumulation runs strictly left to right over ``vs`` so the result is
    reproducible bit for bit for a fixed input order.
    """
    if len(vs) == 0:
        raise EmptyAggregateError("weighted_mean of no vectors")
    if len(vs) != len(weights):
        raise DimensionError(f"{len(vs)} vectors but {len(weights)} weights")
    for w in weights:
        if not (w > 0) or not math.isfinite(w):
            raise WeightError(f"weights must be finite and strictly positive, got {w!r}")
    n = vs[0].shape
    for v in vs:
        if v.shape != n:
            raise DimensionError(f"length mismatch: {v.shape} vs {n}")

    total = 0.0
    acc = np.zeros(n, dtype=np.float64)
    for v, w in zip(vs, weights):
        acc = acc + float(w) * v
        total += float(w)
    return acc / total


def finite_diff_grad(
    f: Callable[[ParamVector], float], w: ParamVector, h: float = DEFAULT_FD_STEP
) -> ParamVector:
    """Central-difference gradient of ``f`` at ``w``, one coordinate at a time."""
    if not h > 0:
        raise ParameterError(f"step h must be positive, got {h}")
    w = np.asarray(w, dtype=np.float64)
    grad = np.empty_like(w)
    probe = w.copy()
    for i in range(w.shape[0]):
        orig = probe[i]
        probe[i] = orig + h
        fp = float(f(probe))
        probe[i] = orig - h
        fm = float(f(probe))
        probe[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise OracleError(f"non-finite objective while probing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def _purpose_code(purpose: str) -> int:
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """Identifies one reproducible random stream.

    Every call to :meth:`generator` restarts the stream from its first
    value; consumers that need several draws should take them from a single
    generator.
    """

    master_seed: int
    purpose: str
    client: int = 0
    round: int = 0

    def __post_init__(self):
        if self.client < 0 or self.round < 0:
            raise ParameterError("stream client and round indices must be non-negative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=self.master_seed & _U64,
            spawn_key=(_purpose_code(self.purpose), self.client, self.round),
        )
        return np.random.Generator(np.random.Philox(seq))

    def child(self, purpose: str | None = None, client: int | None = None,
              round: int | None = None) -> "RngStream":
        return RngStream(
            self.master_seed,
            self.purpose if purpose is None else purpose,
            self.client if client is None else client,
            self.round if round is None else round,
        )


def draw_gaussian(stream: RngStream, n: int, mean: float = 0.0, stddev: float = 1.0) -> ParamVector:
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if stddev < 0:
        raise ParameterError(f"stddev must be >= 0, got {stddev}")
    if stddev == 0:
        return np.full(n, float(mean))
    return mean + stddev * stream.generator().standard_normal(n)
