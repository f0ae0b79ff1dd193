"""
KL, JS and TV divergences between two ProbDists, and the FSD threshold test.

All logarithms are natural (nats). Terms with p[t] = 0 contribute 0 by
continuity; KL is +inf whenever p puts mass where q has none. No smoothing is
applied, so the threshold test rejects on infinite divergence.
"""

import logging
import math

import numpy as np

from fsdlab.errors import VocabMismatch
from fsdlab.models.schemas import DivergenceKind
from fsdlab.services.prob_core import ProbDist

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


def _check_vocab(p: ProbDist, q: ProbDist) -> None:
    if p.vocab_size != q.vocab_size:
        raise VocabMismatch(f"vocab sizes differ: {p.vocab_size} vs {q.vocab_size}")


def _kl_array(p: np.ndarray, q: np.ndarray) -> float:
    support = p > 0
    ps = p[support]
    qs = q[support]
    if np.any(qs == 0):
        return math.inf
    return max(0.0, float(np.sum(ps * np.log(ps / qs))))


def kl(p: ProbDist, q: ProbDist) -> float:
    """D_KL(p || q). The acceptance test calls this as kl(P_T, P_D)."""
    _check_vocab(p, q)
    return _kl_array(p.probs, q.probs)


def js(p: ProbDist, q: ProbDist) -> float:
    _check_vocab(p, q)
    m = 0.5 * (p.probs + q.probs)
    value = 0.5 * _kl_array(p.probs, m) + 0.5 * _kl_array(q.probs, m)
    return min(max(value, 0.0), LN2)


def tv(p: ProbDist, q: ProbDist) -> float:
    _check_vocab(p, q)
    value = 0.5 * float(np.sum(np.abs(p.probs - q.probs)))
    return min(value, 1.0)


_DIVERGENCES = {
    DivergenceKind.KL: kl,
    DivergenceKind.JS: js,
    DivergenceKind.TV: tv,
}


def divergence(kind: DivergenceKind, p: ProbDist, q: ProbDist) -> float:
    return _DIVERGENCES[DivergenceKind(kind)](p, q)


def below_threshold(kind: DivergenceKind, p: ProbDist, q: ProbDist, threshold: float) -> bool:
    """True iff Div(p, q) < threshold (strict, so T = 0 never accepts)."""
    if threshold < 0:
        raise ValueError(f"threshold must be non-negative, got {threshold}")
    return divergence(kind, p, q) < threshold
