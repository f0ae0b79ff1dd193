"""
Exact sequence-level distributions of the decode processes on small table models.

Every enumeration walks the full prefix tree of depth N, so the work is
vocab_size ** N next_dist lookups; instances beyond settings.ENUMERATION_CAP
are refused with EnumerationTooLarge instead of being approximated.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from fsdlab.config import settings
from fsdlab.errors import DomainMismatch, EnumerationTooLarge, VocabMismatch
from fsdlab.models.records import BoundReport, RandomBaselineReport
from fsdlab.models.schemas import DivergenceKind
from fsdlab.services.decoding import residual_dist, sd_accept_prob
from fsdlab.services.divergence import divergence
from fsdlab.services.prob_core import ProbDist, TokenId
from fsdlab.services.table_model import ModelBackend

logger = logging.getLogger(__name__)

Sequence_ = Tuple[TokenId, ...]

# masks are enumerated exhaustively up to this many, sampled beyond
MAX_EXACT_MASKS = 4096
PROB_TOL = 1e-9


@dataclass(frozen=True)
class SequenceDist:
    """Probability of every reachable length-N continuation."""

    probs: Dict[Sequence_, float]
    vocab_size: int
    length: int

    def __post_init__(self):
        total = sum(self.probs.values())
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"sequence probabilities sum to {total}, expected 1")
        for seq, p in self.probs.items():
            if len(seq) != self.length:
                raise ValueError(f"sequence {seq} has length {len(seq)}, expected {self.length}")
            if p <= 0:
                raise ValueError(f"sequence {seq} has non-positive probability {p}")

    def __len__(self) -> int:
        return len(self.probs)

    def get(self, seq: Sequence_) -> float:
        return self.probs.get(tuple(seq), 0.0)


def _check_enumerable(target: ModelBackend, draft: Optional[ModelBackend], n: int) -> None:
    if n < 0:
        raise ValueError(f"sequence length must be non-negative, got {n}")
    if draft is not None and draft.vocab_size != target.vocab_size:
        raise VocabMismatch(f"target vocab {target.vocab_size} != draft vocab {draft.vocab_size}")
    size = target.vocab_size ** n
    if size > settings.ENUMERATION_CAP:
        raise EnumerationTooLarge(
            f"{target.vocab_size}^{n} = {size} sequences exceeds the cap of {settings.ENUMERATION_CAP}"
        )


def enumerate_target_dist(target: ModelBackend, prompt: Sequence[TokenId], n: int) -> SequenceDist:
    """Ancestral distribution of the target over length-n continuations."""
    _check_enumerable(target, None, n)
    out: Dict[Sequence_, float] = {}
    stack: List[Tuple[Sequence_, float]] = [((), 1.0)]
    while stack:
        suffix, p = stack.pop()
        if len(suffix) == n:
            out[suffix] = p
            continue
        dist = target.next_dist(list(prompt) + list(suffix))
        for x in np.flatnonzero(dist.probs):
            stack.append((suffix + (int(x),), p * dist[int(x)]))
    return SequenceDist(out, target.vocab_size, n)


@dataclass
class FsdWalk:
    """Joint walk of the target measure and the FSD process over the prefix tree."""

    target: Dict[Sequence_, float] = field(default_factory=dict)
    fsd: Dict[Sequence_, float] = field(default_factory=dict)
    use_target: List[float] = field(default_factory=list)  # P_T(draft used at position t)
    use_fsd: List[float] = field(default_factory=list)  # P_FSD(draft used at position t)
    step_terms: List[float] = field(default_factory=list)  # E_T[use_t * Div(pT, pD)]


def walk_fsd(
    target: ModelBackend,
    draft: ModelBackend,
    prompt: Sequence[TokenId],
    n: int,
    kind: DivergenceKind,
    threshold: float,
    candidate_length: int,
    bonus_token: bool = True,
) -> FsdWalk:
    """
    FSD with sampled drafting at temperature 1. The acceptance test only
    depends on the prefix, so the block slot of every prefix is deterministic:
    slots 0..L-1 are candidates, slot L is the bonus position. At a candidate
    slot that passes the test the emitted token is drawn from the draft,
    otherwise (failed test or bonus slot) from the target.
    """
    _check_enumerable(target, draft, n)
    if candidate_length < 1:
        raise ValueError("candidate_length must be at least 1")
    if threshold < 0:
        raise ValueError(f"threshold must be non-negative, got {threshold}")

    walk = FsdWalk(use_target=[0.0] * n, use_fsd=[0.0] * n, step_terms=[0.0] * n)
    vocab = target.vocab_size
    stack: List[Tuple[Sequence_, int, float, float]] = [((), 0, 1.0, 1.0)]
    while stack:
        suffix, slot, p_t, p_f = stack.pop()
        depth = len(suffix)
        if depth == n:
            if p_t > 0:
                walk.target[suffix] = p_t
            if p_f > 0:
                walk.fsd[suffix] = p_f
            continue

        ctx = list(prompt) + list(suffix)
        pT = target.next_dist(ctx)
        use = False
        effective = pT
        if slot < candidate_length:
            pD = draft.next_dist(ctx)
            div = divergence(kind, pT, pD)
            if div < threshold:
                use = True
                effective = pD
                walk.use_target[depth] += p_t
                walk.use_fsd[depth] += p_f
                walk.step_terms[depth] += p_t * div

        if use:
            next_slot = slot + 1
            if next_slot == candidate_length and not bonus_token:
                next_slot = 0
        else:
            next_slot = 0

        for x in range(vocab):
            nt = p_t * pT[x]
            nf = p_f * effective[x]
            if nt > 0 or nf > 0:
                stack.append((suffix + (x,), next_slot, nt, nf))
    return walk


def enumerate_fsd_dist(
    target: ModelBackend,
    draft: ModelBackend,
    prompt: Sequence[TokenId],
    n: int,
    kind: DivergenceKind,
    threshold: float,
    candidate_length: int,
    bonus_token: bool = True,
) -> SequenceDist:
    walk = walk_fsd(target, draft, prompt, n, kind, threshold, candidate_length, bonus_token)
    return SequenceDist(walk.fsd, target.vocab_size, n)


def enumerate_sd_dist(
    target: ModelBackend,
    draft: ModelBackend,
    prompt: Sequence[TokenId],
    n: int,
    candidate_length: int,
    bonus_token: bool = True,
) -> SequenceDist:
    """
    SD process distribution with the acceptance draws integrated out.

    States are (prefix, slot). From a candidate slot, token y moves to slot+1
    with mass pD[y] * min(1, pT[y]/pD[y]); the total rejection mass moves to
    slot 0 spread over the residual distribution.
    """
    _check_enumerable(target, draft, n)
    if candidate_length < 1:
        raise ValueError("candidate_length must be at least 1")

    layer: Dict[Tuple[Sequence_, int], float] = {((), 0): 1.0}
    for _ in range(n):
        nxt: Dict[Tuple[Sequence_, int], float] = {}

        def add(key, mass):
            nxt[key] = nxt.get(key, 0.0) + mass

        for (suffix, slot), p in layer.items():
            ctx = list(prompt) + list(suffix)
            pT = target.next_dist(ctx)
            if slot >= candidate_length:
                for x in np.flatnonzero(pT.probs):
                    add((suffix + (int(x),), 0), p * pT[int(x)])
                continue

            pD = draft.next_dist(ctx)
            accept_slot = slot + 1
            if accept_slot == candidate_length and not bonus_token:
                accept_slot = 0
            reject_mass = 0.0
            for y in np.flatnonzero(pD.probs):
                y = int(y)
                a = sd_accept_prob(pT[y], pD[y])
                if a > 0:
                    add((suffix + (y,), accept_slot), p * pD[y] * a)
                reject_mass += pD[y] * (1.0 - a)
            if reject_mass > 0 and pT != pD:
                residual = residual_dist(pT, pD)
                for x in np.flatnonzero(residual.probs):
                    add((suffix + (int(x),), 0), p * reject_mass * residual[int(x)])
        layer = nxt

    out: Dict[Sequence_, float] = {}
    for (suffix, _), p in layer.items():
        if p > 0:
            out[suffix] = out.get(suffix, 0.0) + p
    return SequenceDist(out, target.vocab_size, n)


def sequence_divergence(kind: DivergenceKind, a: SequenceDist, b: SequenceDist) -> float:
    """Div(a || b) treating every full sequence as one categorical outcome."""
    if a.vocab_size != b.vocab_size or a.length != b.length:
        raise DomainMismatch(
            f"cannot compare sequences of vocab {a.vocab_size}/length {a.length} "
            f"with vocab {b.vocab_size}/length {b.length}"
        )
    keys = sorted(set(a.probs) | set(b.probs))
    pa = np.array([a.get(k) for k in keys])
    pb = np.array([b.get(k) for k in keys])
    # renormalize away the float drift of long products before the ProbDist check
    return divergence(kind, ProbDist(pa / pa.sum()), ProbDist(pb / pb.sum()))


def check_bound(
    target: ModelBackend,
    draft: ModelBackend,
    prompt: Sequence[TokenId],
    n: int,
    kind: DivergenceKind,
    threshold: float,
    candidate_length: int,
    bonus_token: bool = True,
) -> BoundReport:
    """Exact Div(P_T, P_FSD) against the N * p_use * T bound."""
    walk = walk_fsd(target, draft, prompt, n, kind, threshold, candidate_length, bonus_token)
    target_dist = SequenceDist(walk.target, target.vocab_size, n)
    fsd_dist = SequenceDist(walk.fsd, target.vocab_size, n)
    exact = sequence_divergence(kind, target_dist, fsd_dist)

    p_use = sum(walk.use_target) / n if n else 0.0
    pct_md = sum(walk.use_fsd) / n if n else 0.0
    bound = n * p_use * threshold
    decomposition_sum = float(sum(walk.step_terms))
    decomposition_exact = None
    if DivergenceKind(kind) == DivergenceKind.KL:
        decomposition_exact = abs(decomposition_sum - exact) <= 1e-9 * max(1.0, exact)

    report = BoundReport(
        kind=kind,
        threshold=threshold,
        length=n,
        candidate_length=candidate_length,
        exact_divergence=exact,
        p_use=p_use,
        pct_md=pct_md,
        bound=bound,
        slack=bound - exact,
        step_terms=list(walk.step_terms),
        step_use=list(walk.use_target),
        decomposition_sum=decomposition_sum,
        decomposition_exact=decomposition_exact,
        holds=exact <= bound + 1e-12,
    )
    logger.debug(f"Bound check kind={kind} T={threshold}: exact={exact:.6g} bound={bound:.6g}")
    return report


def masked_dist(
    target: ModelBackend, draft: ModelBackend, prompt: Sequence[TokenId], mask: Sequence[bool]
) -> SequenceDist:
    """Process that emits from the draft exactly at the positions set in `mask`."""
    n = len(mask)
    _check_enumerable(target, draft, n)
    out: Dict[Sequence_, float] = {}
    stack: List[Tuple[Sequence_, float]] = [((), 1.0)]
    while stack:
        suffix, p = stack.pop()
        depth = len(suffix)
        if depth == n:
            out[suffix] = p
            continue
        ctx = list(prompt) + list(suffix)
        dist = draft.next_dist(ctx) if mask[depth] else target.next_dist(ctx)
        for x in np.flatnonzero(dist.probs):
            stack.append((suffix + (int(x),), p * dist[int(x)]))
    return SequenceDist(out, target.vocab_size, n)


def _masks(n: int, rate: float, seed: int, samples: int) -> Iterable[Tuple[Tuple[bool, ...], float]]:
    if 2**n <= MAX_EXACT_MASKS:
        for mask in itertools.product((False, True), repeat=n):
            used = sum(mask)
            weight = (rate**used) * ((1.0 - rate) ** (n - used))
            if weight > 0:
                yield mask, weight
        return
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    for _ in range(samples):
        yield tuple(bool(b) for b in gen.random(n) < rate), 1.0 / samples


def compare_random_baseline(
    target: ModelBackend,
    draft: ModelBackend,
    prompt: Sequence[TokenId],
    n: int,
    kind: DivergenceKind,
    threshold: float,
    seed: int = 0,
    samples: int = 100,
    candidate_length: Optional[int] = None,
) -> RandomBaselineReport:
    """
    FSD at `threshold` against a policy that uses the draft at each position
    independently with FSD's draft-use probability. Bonus slots are disabled
    on both sides so every position is a candidate.
    """
    walk = walk_fsd(target, draft, prompt, n, kind, threshold, candidate_length or max(n, 1), bonus_token=False)
    target_dist = SequenceDist(walk.target, target.vocab_size, n)
    fsd_div = sequence_divergence(kind, target_dist, SequenceDist(walk.fsd, target.vocab_size, n))
    rate = min(1.0, sum(walk.use_target) / n) if n else 0.0

    expected = 0.0
    total_weight = 0.0
    masks = 0
    for mask, weight in _masks(n, rate, seed, samples):
        expected += weight * sequence_divergence(kind, target_dist, masked_dist(target, draft, prompt, mask))
        total_weight += weight
        masks += 1
    random_div = expected / total_weight if total_weight else 0.0

    return RandomBaselineReport(
        kind=kind,
        threshold=threshold,
        length=n,
        use_fraction=rate,
        fsd_divergence=fsd_div,
        random_divergence=random_div,
        masks=masks,
        exact_expectation=2**n <= MAX_EXACT_MASKS,
        fsd_better=fsd_div <= random_div + 1e-12,
    )
