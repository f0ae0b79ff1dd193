"""Seeded target/draft table pairs with controllable alignment."""

import itertools
import logging
from typing import Dict, List, Tuple

import numpy as np

from fsdlab.models.schemas import DivergenceKind, SyntheticPairSpec
from fsdlab.services.divergence import divergence
from fsdlab.services.prob_core import ProbDist, apply_temperature, normalize
from fsdlab.services.table_model import Context, TableModel

logger = logging.getLogger(__name__)


def all_contexts(vocab_size: int, order: int) -> List[Context]:
    """Every context of length 0..order, shortest first, lexicographic within a length."""
    contexts: List[Context] = []
    for k in range(order + 1):
        contexts.extend(itertools.product(range(vocab_size), repeat=k))
    return contexts


def generate_pair(spec: SyntheticPairSpec) -> Tuple[TableModel, TableModel]:
    """
    Build (target, draft) tables over every context of length <= order.

    Target rows are symmetric Dirichlet draws. The draft row for a context is
    normalize(alpha * target + (1 - alpha) * noise) where the noise row is an
    independent Dirichlet draw sharpened or flattened by `noise_temperature`.
    Target and noise come from separate child streams of the seed, so the
    same seed gives the same target and noise rows for every alpha.
    """
    target_seq, noise_seq = np.random.SeedSequence(spec.seed).spawn(2)
    target_gen = np.random.Generator(np.random.Philox(target_seq))
    noise_gen = np.random.Generator(np.random.Philox(noise_seq))
    concentration = np.full(spec.vocab_size, spec.concentration)
    alpha = spec.alignment

    target_table: Dict[Context, ProbDist] = {}
    draft_table: Dict[Context, ProbDist] = {}
    for ctx in all_contexts(spec.vocab_size, spec.order):
        target_dist = normalize(_positive_dirichlet(target_gen, concentration))
        noise = apply_temperature(
            normalize(_positive_dirichlet(noise_gen, concentration)), spec.noise_temperature
        )
        target_table[ctx] = target_dist
        if alpha == 1.0:
            draft_table[ctx] = target_dist
        else:
            draft_table[ctx] = normalize(alpha * target_dist.probs + (1.0 - alpha) * noise.probs)

    uniform = ProbDist.uniform(spec.vocab_size)
    target = TableModel(spec.vocab_size, spec.order, target_table, uniform, name=f"target-s{spec.seed}")
    draft = TableModel(spec.vocab_size, spec.order, draft_table, uniform, name=f"draft-s{spec.seed}-a{alpha}")
    logger.debug(f"Generated synthetic pair seed={spec.seed} vocab={spec.vocab_size} order={spec.order} alpha={alpha}")
    return target, draft


def _positive_dirichlet(gen: np.random.Generator, concentration: np.ndarray) -> np.ndarray:
    # small concentrations can underflow every component to zero
    weights = gen.dirichlet(concentration)
    if weights.sum() <= 0 or not np.all(np.isfinite(weights)):
        weights = np.ones_like(concentration)
    return weights


def pair_divergences(
    target: TableModel, draft: TableModel, kind: DivergenceKind = DivergenceKind.JS
) -> Dict[Context, float]:
    """Divergence between target and draft rows for every context the target tabulates."""
    return {ctx: divergence(kind, target.next_dist(ctx), draft.next_dist(ctx)) for ctx in target.contexts()}


def divergence_histogram(values: List[float], bins: int = 20, upper: float | None = None) -> List[Tuple[float, float, int]]:
    """(bin_start, bin_end, count) rows; infinite values land in the last bin."""
    finite = [v for v in values if np.isfinite(v)]
    top = upper if upper is not None else (max(finite) if finite else 1.0)
    top = top if top > 0 else 1.0
    clipped = np.clip(np.array([v if np.isfinite(v) else top for v in values], dtype=float), 0.0, top)
    counts, edges = np.histogram(clipped, bins=bins, range=(0.0, top))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def mean_divergence(target: TableModel, draft: TableModel, kind: DivergenceKind = DivergenceKind.JS) -> float:
    values = list(pair_divergences(target, draft, kind).values())
    return float(np.mean(values)) if values else 0.0
