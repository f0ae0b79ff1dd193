"""
Verification suites. Each suite draws seeded random instances, runs the
relevant exact oracle or decode comparison and returns one VerifyReport per
check. `passed=False` is a failed check; `flagged=True` marks a property we
report but do not require (JS bound, realized decode monotonicity, single
random-baseline losses).
"""

import asyncio
import logging
from collections import Counter
from typing import Callable, Dict, List, Tuple

import numpy as np

from fsdlab.errors import ProtocolViolation
from fsdlab.models.records import VerifyReport
from fsdlab.models.schemas import (
    DivergenceKind,
    DistsResponse,
    DraftingConfig,
    FSDPolicy,
    HelloResponse,
    RFSDPolicy,
    SamplingMode,
    SDPolicy,
    SyntheticPairSpec,
)
from fsdlab.services.corpus import prompt_sequence_id
from fsdlab.services.decoding import decode, replay_block_stats, replay_decisions, step_law
from fsdlab.services.divergence import tv
from fsdlab.services.logit_server import LogitServer
from fsdlab.services.metrics import compute_metrics
from fsdlab.services.oracle import (
    SequenceDist,
    check_bound,
    compare_random_baseline,
    enumerate_fsd_dist,
    enumerate_sd_dist,
    enumerate_target_dist,
    sequence_divergence,
)
from fsdlab.services.prob_core import ProbDist, RngState, normalize, sample
from fsdlab.services.remote_model import LogitClient, TcpTransport
from fsdlab.services.synthetic import generate_pair, mean_divergence, pair_divergences
from fsdlab.services.table_model import TableModel, check_batched_consistency

logger = logging.getLogger(__name__)

EXACT_TOL = 1e-12
T_GRID = [round(0.1 * i, 1) for i in range(11)]
SAMPLED = DraftingConfig(
    draft_mode=SamplingMode(strategy="sampled"),
    rejection_sampling=SamplingMode(strategy="sampled"),
)


def _generator(seed: int, suite: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, prompt_sequence_id(suite)])))


def _random_pair(
    gen: np.random.Generator,
    vocab_sizes=(2, 3, 4),
    orders=(0, 1, 2),
    alignment=(0.0, 1.0),
) -> Tuple[SyntheticPairSpec, TableModel, TableModel]:
    spec = SyntheticPairSpec(
        seed=int(gen.integers(2**31)),
        vocab_size=int(gen.choice(vocab_sizes)),
        order=int(gen.choice(orders)),
        alignment=float(gen.uniform(*alignment)),
    )
    target, draft = generate_pair(spec)
    return spec, target, draft


def _random_prompt(gen: np.random.Generator, vocab_size: int, max_len: int = 3) -> List[int]:
    return [int(t) for t in gen.integers(vocab_size, size=int(gen.integers(1, max_len + 1)))]


def _summary(suite: str, check: str, reports: List[VerifyReport], **details) -> VerifyReport:
    failed = sum(1 for r in reports if not r.passed)
    flagged = sum(1 for r in reports if r.flagged)
    return VerifyReport(
        suite=suite,
        check=check,
        passed=failed == 0,
        flagged=flagged > 0,
        details={"instances": len(reports), "failed": failed, "flagged": flagged, **details},
    )


def suite_sd_identity(seed: int = 0, pairs: int = 1000) -> List[VerifyReport]:
    """Acceptance mass plus rejection mass times the residual reproduces pT."""
    gen = _generator(seed, "sd-identity")
    worst = 0.0
    failures = []
    for i in range(pairs):
        vocab = int(gen.integers(2, 65))
        pT = normalize(gen.dirichlet(np.ones(vocab)))
        pD = normalize(gen.dirichlet(np.ones(vocab)))
        err = float(np.max(np.abs(step_law(SDPolicy(), pT, pD).probs - pT.probs)))
        worst = max(worst, err)
        if err > EXACT_TOL:
            failures.append(i)
    return [
        VerifyReport(
            suite="sd-identity",
            check="per-step law equals target",
            passed=not failures,
            details={"pairs": pairs, "max_abs_error": worst, "failed_instances": failures},
        )
    ]


def suite_sd_equivalence(seed: int = 0, instances: int = 50) -> List[VerifyReport]:
    gen = _generator(seed, "sd-equivalence")
    reports = []
    for i in range(instances):
        spec, target, draft = _random_pair(gen)
        prompt = _random_prompt(gen, spec.vocab_size)
        n = int(gen.integers(1, 5))
        length = int(gen.integers(1, 4))
        distance = sequence_divergence(
            DivergenceKind.TV,
            enumerate_sd_dist(target, draft, prompt, n, length),
            enumerate_target_dist(target, prompt, n),
        )
        reports.append(
            VerifyReport(
                suite="sd-equivalence",
                check="SD sequence law equals target",
                instance=i,
                passed=distance <= EXACT_TOL,
                details={"vocab_size": spec.vocab_size, "N": n, "L": length, "tv": distance},
            )
        )
    return reports + [_summary("sd-equivalence", "summary", reports)]


def suite_fsd_bound(seed: int = 0, instances: int = 100) -> List[VerifyReport]:
    """KL and TV bounds are required; JS slack is reported and violations flagged."""
    gen = _generator(seed, "fsd-bound")
    reports = []
    for kind in (DivergenceKind.KL, DivergenceKind.TV, DivergenceKind.JS):
        per_kind = []
        slacks = []
        for i in range(instances):
            spec, target, draft = _random_pair(gen, orders=(0, 1))
            prompt = _random_prompt(gen, spec.vocab_size)
            n = int(gen.integers(1, 4))
            length = int(gen.integers(1, 4))
            threshold = float(gen.uniform(0.0, 0.6))
            report = check_bound(target, draft, prompt, n, kind, threshold, length)
            slacks.append(report.slack)
            terms_ok = all(term <= use * threshold + EXACT_TOL for term, use in zip(report.step_terms, report.step_use))
            if kind == DivergenceKind.KL:
                passed = report.holds and terms_ok and bool(report.decomposition_exact)
                flagged = False
            elif kind == DivergenceKind.TV:
                passed = report.holds and terms_ok
                flagged = False
            else:
                passed = True
                flagged = not report.holds
                if flagged:
                    logger.warning(f"JS bound exceeded on instance {i}: slack {report.slack:.3g}")
            per_kind.append(
                VerifyReport(
                    suite="fsd-bound",
                    check=f"{kind.value} bound",
                    instance=i,
                    passed=passed,
                    flagged=flagged,
                    details=report.model_dump(mode="json"),
                )
            )
        reports.extend(per_kind)
        reports.append(
            _summary(
                "fsd-bound",
                f"{kind.value} bound summary",
                per_kind,
                min_slack=float(np.min(slacks)),
                median_slack=float(np.median(slacks)),
            )
        )
    return reports


def suite_rfsd_reduction(seed: int = 0, instances: int = 100) -> List[VerifyReport]:
    gen = _generator(seed, "rfsd-reduction")
    reports = []
    for i in range(instances):
        spec, target, draft = _random_pair(gen, vocab_sizes=(2, 3, 4, 8), orders=(0, 1, 2))
        prompt = _random_prompt(gen, spec.vocab_size)
        kind = DivergenceKind(gen.choice(["kl", "js", "tv"]))
        cfg = SAMPLED.model_copy(update={"candidate_length": int(gen.integers(1, 6))})
        sd = decode(target, draft, prompt, SDPolicy(), cfg, 24, RngState(seed, (i,)))
        rfsd = decode(target, draft, prompt, RFSDPolicy(kind=kind, threshold=0.0), cfg, 24, RngState(seed, (i,)))
        same_blocks = [len(b.emitted) for b in sd.trace.blocks] == [len(b.emitted) for b in rfsd.trace.blocks]
        reports.append(
            VerifyReport(
                suite="rfsd-reduction",
                check="rFSD at T=0 reproduces SD",
                instance=i,
                passed=sd.tokens == rfsd.tokens and same_blocks,
                details={"kind": kind.value, "L": cfg.candidate_length, "tokens": len(sd.tokens)},
            )
        )
    return reports + [_summary("rfsd-reduction", "summary", reports)]


def suite_random_baseline(seed: int = 0, instances: int = 100, required_fraction: float = 0.95) -> List[VerifyReport]:
    gen = _generator(seed, "random-baseline")
    reports = []
    for i in range(instances):
        spec, target, draft = _random_pair(gen, vocab_sizes=(2, 3), orders=(1,), alignment=(0.0, 0.5))
        prompt = _random_prompt(gen, spec.vocab_size)
        n = int(gen.integers(3, 5))
        threshold = float(np.median(list(pair_divergences(target, draft, DivergenceKind.KL).values())))
        result = compare_random_baseline(target, draft, prompt, n, DivergenceKind.KL, threshold, seed=seed)
        reports.append(
            VerifyReport(
                suite="random-baseline",
                check="FSD beats matched random acceptance",
                instance=i,
                passed=True,
                flagged=not result.fsd_better,
                details=result.model_dump(mode="json"),
            )
        )
    wins = sum(1 for r in reports if not r.flagged)
    summary = VerifyReport(
        suite="random-baseline",
        check="summary",
        passed=wins >= required_fraction * instances,
        flagged=wins < instances,
        details={"instances": instances, "fsd_better": wins, "required_fraction": required_fraction},
    )
    return reports + [summary]


def suite_endpoints(seed: int = 0, instances: int = 20) -> List[VerifyReport]:
    gen = _generator(seed, "endpoints")
    reports = []
    for i in range(instances):
        spec, target, draft = _random_pair(gen, orders=(0, 1))
        prompt = _random_prompt(gen, spec.vocab_size)
        kind = DivergenceKind(gen.choice(["kl", "js", "tv"]))
        n = int(gen.integers(1, 4))
        length = int(gen.integers(1, 4))

        distance = sequence_divergence(
            DivergenceKind.TV,
            enumerate_fsd_dist(target, draft, prompt, n, kind, 0.0, length),
            enumerate_target_dist(target, prompt, n),
        )
        reports.append(
            VerifyReport(
                suite="endpoints", check="T=0 equals target", instance=i,
                passed=distance <= EXACT_TOL, details={"kind": kind.value, "tv": distance},
            )
        )

        top = max(pair_divergences(target, draft, kind).values())
        if not np.isfinite(top):
            continue
        cfg = SAMPLED.model_copy(update={"candidate_length": length})
        trace = decode(target, draft, prompt, FSDPolicy(kind=kind, threshold=top + 0.01), cfg, 16, RngState(seed, (i,))).trace
        pct = compute_metrics(trace).acceptance_pct
        reports.append(
            VerifyReport(
                suite="endpoints", check="T above max divergence accepts everything", instance=i,
                passed=pct == 100.0, details={"kind": kind.value, "threshold": top + 0.01, "accept_pct": pct},
            )
        )
    return reports + [_summary("endpoints", "summary", reports)]


def empirical_dist(samples: List[Tuple[int, ...]], vocab_size: int, length: int) -> SequenceDist:
    counts = Counter(samples)
    total = len(samples)
    return SequenceDist({seq: c / total for seq, c in counts.items()}, vocab_size, length)


def suite_decode_vs_oracle(
    seed: int = 0, instances: int = 10, samples: int = 100_000, tolerance: float = 0.02
) -> List[VerifyReport]:
    """Monte Carlo decodes against the exact FSD law on vocab 3, N 3."""
    gen = _generator(seed, "decode-vs-oracle")
    reports = []
    n = 3
    for i in range(instances):
        spec, target, draft = _random_pair(gen, vocab_sizes=(3,), orders=(1,))
        prompt = _random_prompt(gen, 3)
        kind = DivergenceKind(gen.choice(["kl", "js", "tv"]))
        threshold = float(np.median(list(pair_divergences(target, draft, kind).values())))
        cfg = SAMPLED.model_copy(update={"candidate_length": int(gen.integers(1, 4))})
        policy = FSDPolicy(kind=kind, threshold=threshold)

        exact = enumerate_fsd_dist(target, draft, prompt, n, kind, threshold, cfg.candidate_length, cfg.bonus_token)
        drawn = [
            tuple(decode(target, draft, prompt, policy, cfg, n, RngState(seed, (i, s))).tokens)
            for s in range(samples)
        ]
        distance = sequence_divergence(DivergenceKind.TV, empirical_dist(drawn, 3, n), exact)
        reports.append(
            VerifyReport(
                suite="decode-vs-oracle", check="empirical decode law matches oracle", instance=i,
                passed=distance <= tolerance,
                details={"kind": kind.value, "threshold": threshold, "L": cfg.candidate_length,
                         "samples": samples, "tv": distance},
            )
        )
    return reports + [_summary("decode-vs-oracle", "summary", reports)]


def suite_monotonicity(seed: int = 0, instances: int = 20, trajectory_length: int = 24) -> List[VerifyReport]:
    """
    Replayed decisions on a fixed target-sampled trajectory must be monotone
    in T and in alignment. Realized greedy decodes across T are flagged only.
    """
    gen = _generator(seed, "monotonicity")
    reports = []
    length = 5
    alphas = [0.0, 0.25, 0.5, 0.75, 1.0]
    for i in range(instances):
        base = SyntheticPairSpec(seed=int(gen.integers(2**31)), vocab_size=4, order=1, alignment=float(gen.uniform(0, 1)))
        target, draft = generate_pair(base)
        prompt = _random_prompt(gen, 4)
        rng = RngState(seed, (i,))
        trajectory: List[int] = []
        for _ in range(trajectory_length):
            trajectory.append(sample(target.next_dist(prompt + trajectory), rng))

        pcts, alens = [], []
        for t in T_GRID:
            flags = replay_decisions(target, draft, prompt, trajectory, FSDPolicy(threshold=t))
            accepted, blocks = replay_block_stats(flags, length)
            pcts.append(100.0 * accepted / len(flags))
            alens.append(accepted / blocks if blocks else 0.0)
        monotone_t = all(b >= a for a, b in zip(pcts, pcts[1:])) and all(b >= a - EXACT_TOL for a, b in zip(alens, alens[1:]))
        reports.append(
            VerifyReport(
                suite="monotonicity", check="replayed acceptance non-decreasing in T", instance=i,
                passed=monotone_t, details={"accept_pct": pcts, "alen": alens},
            )
        )

        by_alpha = []
        mean_js = []
        for alpha in alphas:
            _, aligned_draft = generate_pair(base.model_copy(update={"alignment": alpha}))
            mean_js.append(mean_divergence(target, aligned_draft, DivergenceKind.JS))
            by_alpha.append([
                sum(replay_decisions(target, aligned_draft, prompt, trajectory, FSDPolicy(threshold=t))) / len(trajectory)
                for t in T_GRID
            ])
        monotone_alpha = all(
            by_alpha[k + 1][j] >= by_alpha[k][j] for k in range(len(alphas) - 1) for j in range(len(T_GRID))
        )
        reports.append(
            VerifyReport(
                suite="monotonicity", check="draft use non-decreasing in alignment", instance=i,
                passed=monotone_alpha, details={"alphas": alphas, "pct_md": by_alpha},
            )
        )
        reports.append(
            VerifyReport(
                suite="monotonicity", check="mean JS divergence non-increasing in alignment", instance=i,
                passed=all(b <= a + EXACT_TOL for a, b in zip(mean_js, mean_js[1:])),
                details={"alphas": alphas, "mean_js": mean_js},
            )
        )

        greedy = DraftingConfig(candidate_length=length, rejection_sampling=SamplingMode(strategy="greedy"))
        realized = [
            compute_metrics(decode(target, draft, prompt, FSDPolicy(threshold=t), greedy, trajectory_length, RngState(seed)).trace).acceptance_pct
            for t in T_GRID
        ]
        realized_monotone = all(b >= a for a, b in zip(realized, realized[1:]))
        reports.append(
            VerifyReport(
                suite="monotonicity", check="realized greedy decode acceptance across T", instance=i,
                passed=True, flagged=not realized_monotone, details={"accept_pct": realized},
            )
        )
    return reports + [_summary("monotonicity", "summary", reports)]


async def _protocol_checks(seed: int, requests: int) -> List[VerifyReport]:
    gen = _generator(seed, "protocol")
    spec = SyntheticPairSpec(seed=seed, vocab_size=8, order=2)
    backend, _ = generate_pair(spec)
    server = LogitServer(backend)
    tcp = await server.start_tcp("127.0.0.1", 0)
    port = tcp.sockets[0].getsockname()[1]
    violations = 0
    mismatches = 0
    try:
        async with LogitClient(TcpTransport("127.0.0.1", port), spec.vocab_size) as client:
            for _ in range(requests):
                tokens = [int(t) for t in gen.integers(8, size=int(gen.integers(1, 9)))]
                start = int(gen.integers(0, len(tokens) + 1))
                try:
                    rows = await client.next_dists(tokens, start)
                except ProtocolViolation:
                    violations += 1
                    continue
                expected = backend.next_dists(tokens, start)
                if any(np.max(np.abs(a.probs - b.probs)) > 1e-9 for a, b in zip(rows, expected)):
                    mismatches += 1
            # batched answers agree with one-position requests, remotely and on the served table
            context = [int(t) for t in gen.integers(8, size=6)]
            table_consistent = check_batched_consistency(backend, context, RngState(seed, (1,)))
            batched = await client.next_dists(context, 0)
            inconsistent = 0
            for pos in sorted({int(p) for p in gen.integers(0, len(context), size=3)}):
                single = (await client.next_dists(context[: pos + 1], pos))[0]
                if tv(single, batched[pos]) > 1e-9:
                    inconsistent += 1
    finally:
        tcp.close()
        await tcp.wait_closed()

    malformed_detected = await _malformed_sum_detected()
    return [
        VerifyReport(
            suite="protocol", check="echo round-trips", passed=violations == 0 and mismatches == 0,
            details={"requests": requests, "violations": violations, "mismatches": mismatches},
        ),
        VerifyReport(
            suite="protocol", check="batched/unbatched consistency", passed=inconsistent == 0 and table_consistent,
            details={"inconsistent_positions": inconsistent, "table_consistent": table_consistent},
        ),
        VerifyReport(
            suite="protocol", check="malformed row sum rejected", passed=malformed_detected,
        ),
    ]


async def _malformed_sum_detected() -> bool:
    """A server whose rows sum to 0.5 must trip ProtocolViolation."""
    vocab = 4

    async def handle(reader, writer):
        while line := await reader.readline():
            if b'"hello"' in line:
                frame = HelloResponse(vocab_size=vocab, name="bad-sums")
            else:
                frame = DistsResponse(id=0, probs=[[0.125] * vocab])
            writer.write(frame.model_dump_json().encode("utf-8") + b"\n")
            await writer.drain()
        writer.close()

    server = await asyncio.start_server(handle, "127.0.0.1", 0)
    port = server.sockets[0].getsockname()[1]
    try:
        async with LogitClient(TcpTransport("127.0.0.1", port), vocab) as client:
            await client.next_dists([1, 2], 1)
    except ProtocolViolation:
        return True
    finally:
        server.close()
        await server.wait_closed()
    return False


def suite_protocol(seed: int = 0, requests: int = 1000) -> List[VerifyReport]:
    return asyncio.run(_protocol_checks(seed, requests))


SUITES: Dict[str, Callable[..., List[VerifyReport]]] = {
    "sd-identity": suite_sd_identity,
    "sd-equivalence": suite_sd_equivalence,
    "fsd-bound": suite_fsd_bound,
    "rfsd-reduction": suite_rfsd_reduction,
    "random-baseline": suite_random_baseline,
    "endpoints": suite_endpoints,
    "decode-vs-oracle": suite_decode_vs_oracle,
    "monotonicity": suite_monotonicity,
    "protocol": suite_protocol,
}


def run_suite(name: str, seed: int = 0, **overrides) -> List[VerifyReport]:
    """Run one suite by name, or every suite for "all"."""
    if name == "all":
        reports = []
        for suite_name in SUITES:
            reports.extend(run_suite(suite_name, seed))
        return reports
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(['all', *SUITES])}")
    logger.info(f"Running verify suite {name} (seed {seed})")
    reports = SUITES[name](seed=seed, **overrides)
    failed = [r for r in reports if not r.passed]
    flagged = [r for r in reports if r.flagged]
    logger.info(f"Suite {name}: {len(reports)} checks, {len(failed)} failed, {len(flagged)} flagged")
    return reports


def all_passed(reports: List[VerifyReport]) -> bool:
    return all(r.passed for r in reports)
