"""Aggregate per-recording reports into per-subject mean ± SD tables."""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

from .metrics import MetricsReport


def per_subject(reports: Sequence[MetricsReport]) -> dict[str, dict]:
    """Pool a subject's recordings: timestep counts for raw accuracy, transition counts
    for transition accuracy."""
    acc = defaultdict(lambda: {"n_defined": 0, "n_correct_steps": 0, "n_scored": 0, "n_correct": 0})
    for r in reports:
        a = acc[r.subject_id or "?"]
        a["n_defined"] += r.n_defined
        a["n_correct_steps"] += r.n_correct_steps
        a["n_scored"] += r.n_scored
        a["n_correct"] += r.n_correct_transitions
    out = {}
    for subj, a in sorted(acc.items()):
        out[subj] = {
            "raw_accuracy": a["n_correct_steps"] / a["n_defined"] if a["n_defined"] else None,
            "transition_accuracy": a["n_correct"] / a["n_scored"] if a["n_scored"] else None,
        }
    return out


def mean_sd(values) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def summarize(reports: Sequence[MetricsReport]) -> dict:
    """Group by (method, look-ahead) and compute mean ± SD across subjects."""
    groups = defaultdict(list)
    for r in reports:
        key = (r.config.get("method", "model"), r.config.get("lookahead"))
        groups[key].append(r)
    rows = []
    for (method, lookahead), reps in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0)):
        subj = per_subject(reps)
        raw = mean_sd(s["raw_accuracy"] for s in subj.values())
        trans = mean_sd(s["transition_accuracy"] for s in subj.values())
        rows.append(
            {
                "method": method,
                "lookahead": lookahead,
                "subjects": len(subj),
                "raw_accuracy": {"mean": raw[0], "sd": raw[1]},
                "transition_accuracy": {"mean": trans[0], "sd": trans[1]},
                "per_subject": subj,
            }
        )
    return {"rows": rows}


def format_table(summary: dict, sample_rate_hz: int = 200) -> str:
    def cell(d):
        if d["mean"] is None:
            return "n/a"
        return f"{d['mean']:.2f} ± {d['sd']:.2f}"

    lines = [
        "| Method | Lookahead | Raw Acc. | Trans. Acc. | Subjects |",
        "|---|---|---|---|---|",
    ]
    for row in summary["rows"]:
        la = row["lookahead"]
        la_s = "n/a" if la is None else f"{la / sample_rate_hz:g} s"
        lines.append(
            f"| {row['method']} | {la_s} | {cell(row['raw_accuracy'])} | "
            f"{cell(row['transition_accuracy'])} | {row['subjects']} |"
        )
    return "\n".join(lines)
