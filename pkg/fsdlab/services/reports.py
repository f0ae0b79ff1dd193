# fsdlab/services/reports.py
import csv
import io
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from fsdlab.errors import EmptyResult
from fsdlab.models.records import LengthSelection, SweepResult, SweepRow, TuningRow, VerifyReport

logger = logging.getLogger(__name__)

METRICS_HEADER = [
    "policy", "kind", "T", "L", "seed", "tokens", "ALen", "accept_pct",
    "pct_md", "target_calls", "draft_calls", "proxy_speed",
]
TRADEOFF_HEADER = ["policy", "kind", "L", "T", "seeds", "accept_pct", "pct_md", "proxy_speed"]


def _fmt(value: Optional[float], digits: int = 6) -> str:
    if value is None:
        return ""
    return f"{value:.{digits}f}"


def _kind(row: SweepRow) -> str:
    return row.kind.value if row.kind is not None else ""


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _write_jsonl(path: Path, items: Iterable[dict]) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for item in items:
            f.write(json.dumps(item, sort_keys=True) + "\n")
    return path


def metrics_rows(result: SweepResult) -> List[List[str]]:
    out = []
    for row in result.rows:
        if not row.ok:
            continue
        m = row.metrics
        out.append([
            row.policy,
            _kind(row),
            _fmt(row.threshold, 4),
            str(row.candidate_length),
            str(row.seed),
            str(m.tokens_generated),
            _fmt(m.acceptance_length),
            _fmt(m.acceptance_pct),
            _fmt(m.pct_from_draft),
            str(m.target_calls),
            str(m.draft_calls),
            _fmt(row.proxy_speed),
        ])
    return out


def _group_key(row: SweepRow) -> Tuple[str, str, int, Optional[float]]:
    return (row.policy, _kind(row), row.candidate_length, row.threshold)


def tradeoff_rows(result: SweepResult) -> List[List[str]]:
    """Per (policy, kind, L, T): seed-averaged acceptance, %_MD and proxy speed."""
    out = []
    for (policy, kind, length, threshold), rows in _grouped(r for r in result.rows if r.ok).items():
        n = len(rows)
        out.append([
            policy,
            kind,
            str(length),
            _fmt(threshold, 4),
            str(n),
            _fmt(sum(r.metrics.acceptance_pct for r in rows) / n),
            _fmt(sum(r.metrics.pct_from_draft for r in rows) / n),
            _fmt(sum(r.proxy_speed for r in rows) / n),
        ])
    return out


def summary(result: SweepResult) -> dict:
    ok = [r for r in result.rows if r.ok]
    points = []
    for (policy, kind, length, threshold), rows in _grouped(ok).items():
        n = len(rows)
        points.append({
            "policy": policy,
            "kind": kind or None,
            "L": length,
            "T": threshold,
            "seeds": [r.seed for r in rows],
            "mean_acceptance_length": sum(r.metrics.acceptance_length for r in rows) / n,
            "mean_acceptance_pct": sum(r.metrics.acceptance_pct for r in rows) / n,
            "mean_pct_md": sum(r.metrics.pct_from_draft for r in rows) / n,
            "mean_proxy_speed": sum(r.proxy_speed for r in rows) / n,
            "mean_candidate_length": sum(r.metrics.mean_candidate_length for r in rows) / n,
            "tokens": sum(r.metrics.tokens_generated for r in rows),
            "target_calls": sum(r.metrics.target_calls for r in rows),
            "draft_calls": sum(r.metrics.draft_calls for r in rows),
        })
    return {
        "cost_ratio": result.cost_ratio,
        "rows": len(result.rows),
        "failed_rows": len(result.rows) - len(ok),
        "points": points,
    }


def _grouped(rows: Iterable[SweepRow]) -> Dict[tuple, List[SweepRow]]:
    groups: Dict[tuple, List[SweepRow]] = {}
    for row in rows:
        groups.setdefault(_group_key(row), []).append(row)
    return groups


def emit_reports(result: SweepResult, outdir: Path | str) -> List[Path]:
    """
    Write metrics.csv, summary.json, traces.jsonl, tradeoff.csv and
    errors.jsonl. Output is a pure function of `result`.
    """
    if not result.rows:
        raise EmptyResult("sweep produced no rows; nothing written")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    written = [
        _write_csv(outdir / "metrics.csv", METRICS_HEADER, metrics_rows(result)),
        _write_csv(outdir / "tradeoff.csv", TRADEOFF_HEADER, tradeoff_rows(result)),
    ]
    summary_path = outdir / "summary.json"
    summary_path.write_text(json.dumps(summary(result), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    written.append(summary_path)

    written.append(_write_jsonl(outdir / "traces.jsonl", (
        {
            "policy": r.policy,
            "kind": _kind(r) or None,
            "T": r.threshold,
            "L": r.candidate_length,
            "seed": r.seed,
            "prompts": [b.model_dump() for b in r.block_summaries],
        }
        for r in result.rows if r.ok
    )))
    written.append(_write_jsonl(outdir / "errors.jsonl", (
        {
            "policy": r.policy,
            "kind": _kind(r) or None,
            "T": r.threshold,
            "L": r.candidate_length,
            "seed": r.seed,
            "error": r.error,
        }
        for r in result.errors
    )))
    logger.info(f"Wrote {len(written)} report files to {outdir}")
    return written


def write_verify_reports(reports: Sequence[VerifyReport], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return _write_jsonl(path, (r.model_dump(mode="json") for r in reports))


def write_length_selection(selection: LengthSelection, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [
        [str(t.candidate_length), _fmt(t.target_calls_per_token), _fmt(t.acceptance_pct), _fmt(t.proxy_speed),
         "1" if t.candidate_length == selection.selected else "0"]
        for t in selection.trials
    ]
    return _write_csv(path, ["L", "target_calls_per_token", "accept_pct", "proxy_speed", "selected"], rows)


def write_tuning_rows(rows: Sequence[TuningRow], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = [
        [_fmt(r.threshold, 4), str(r.dev_size), str(r.trials), _fmt(r.test_proxy_speed), _fmt(r.mean_abs_pct_error, 4)]
        for r in rows
    ]
    return _write_csv(path, ["T", "dev_size", "trials", "test_proxy_speed", "mean_abs_pct_error"], table)
