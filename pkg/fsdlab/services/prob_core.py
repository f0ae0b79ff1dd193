"""Token, categorical-distribution and seeded-sampling primitives."""

import logging
from typing import Iterable, Sequence

import numpy as np

from fsdlab.errors import (
    AllZero,
    InvalidDistribution,
    NegativeWeight,
    NonPositiveTemperature,
)

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-9

TokenId = int


class ProbDist:
    """
    Immutable categorical distribution over a token vocabulary.

    Probabilities live in linear space in a read-only float64 array. A vector
    is rejected at construction when an entry is negative or non-finite, or
    when the entries do not sum to 1 within NORMALIZATION_TOL; it is never
    silently renormalized.
    """

    __slots__ = ("_probs", "_cdf")

    def __init__(self, probs: Iterable[float] | np.ndarray):
        arr = np.array(probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidDistribution(
                f"expected a non-empty 1-D probability vector, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise InvalidDistribution("probabilities must be finite")
        if np.any(arr < 0):
            raise InvalidDistribution("probabilities must be non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise InvalidDistribution(f"probabilities sum to {total!r}, expected 1")
        arr.setflags(write=False)
        self._probs = arr
        self._cdf = None

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def vocab_size(self) -> int:
        return int(self._probs.size)

    @property
    def cdf(self) -> np.ndarray:
        if self._cdf is None:
            cdf = np.cumsum(self._probs)
            cdf.setflags(write=False)
            self._cdf = cdf
        return self._cdf

    def __len__(self) -> int:
        return self.vocab_size

    def __getitem__(self, token: TokenId) -> float:
        return float(self._probs[token])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProbDist):
            return NotImplemented
        return bool(np.array_equal(self._probs, other._probs))

    __hash__ = None

    def __getstate__(self):
        return self._probs.tolist()

    def __setstate__(self, state):
        arr = np.array(state, dtype=np.float64)
        arr.setflags(write=False)
        self._probs = arr
        self._cdf = None

    def __repr__(self) -> str:
        return f"ProbDist({np.array2string(self._probs, precision=4)})"

    def to_list(self) -> list[float]:
        return self._probs.tolist()

    @classmethod
    def point_mass(cls, token: TokenId, vocab_size: int) -> "ProbDist":
        probs = np.zeros(vocab_size)
        probs[token] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, vocab_size: int) -> "ProbDist":
        return cls(np.full(vocab_size, 1.0 / vocab_size))


class RngState:
    """
    Single-owner deterministic uniform stream.

    Backed by numpy's counter-based Philox generator seeded through a
    SeedSequence, so independent streams for (run seed, sequence id) pairs
    are derived by spawn key rather than by reseeding.
    """

    def __init__(self, seed: int, stream: Sequence[int] = ()):
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.stream = tuple(int(s) for s in stream)
        seed_seq = np.random.SeedSequence(entropy=seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.Philox(seed_seq))
        self.draws = 0

    @classmethod
    def for_sequence(cls, run_seed: int, sequence_id: int) -> "RngState":
        return cls(run_seed, (sequence_id,))

    def uniform(self) -> float:
        """One draw from U[0, 1)."""
        self.draws += 1
        return float(self._gen.random())

    def spawn(self, sequence_id: int) -> "RngState":
        return RngState(self.seed, self.stream + (sequence_id,))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, stream={self.stream}, draws={self.draws})"


def normalize(weights: Iterable[float] | np.ndarray) -> ProbDist:
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise NegativeWeight(f"negative weight in {w.tolist()}")
    total = w.sum()
    if total <= 0:
        raise AllZero("cannot normalize all-zero weights")
    return ProbDist(w / total)


def sample(dist: ProbDist, rng: RngState) -> TokenId:
    """Inverse-CDF sampling with exactly one uniform draw."""
    u = rng.uniform()
    cdf = dist.cdf
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= cdf.size:
        # cumulative rounding left u above the last partial sum
        idx = int(np.flatnonzero(dist.probs)[-1])
    return idx


def argmax(dist: ProbDist) -> TokenId:
    """Most likely token; ties go to the lowest index."""
    return int(np.argmax(dist.probs))


def apply_temperature(dist: ProbDist, tau: float) -> ProbDist:
    if tau <= 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")
    if tau == 1.0:
        return dist
    probs = dist.probs
    support = probs > 0
    logits = np.full(probs.shape, -np.inf)
    logits[support] = np.log(probs[support]) / tau
    logits -= logits[support].max()
    weights = np.where(support, np.exp(logits), 0.0)
    return normalize(weights)
