"""Length-efficiency accounting over correct answers.

Per method: the mean input-token overhead relative to the base prompt for
the same item, and the mean generation length. The template method adds
nothing to the input, so its overhead column counts the forcibly injected
decode-time tokens instead; generation length is reported both with and
without those forced tokens.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .eval_harness import ItemScore, format_float
from .generator import METHOD_BASE, METHOD_TORSO, METHODS, GenerationRecord


@dataclass
class MethodLengths:
    """Means over records that scored correct; n = 0 leaves them absent."""

    method: str
    n: int
    increased_input_tokens: float | None
    avg_generation_tokens: float | None
    avg_generation_tokens_free: float | None


@dataclass
class LengthReport:
    rows: list[MethodLengths]


def _method_sort_key(method: str) -> tuple[int, str]:
    try:
        return (METHODS.index(method), "")
    except ValueError:
        return (len(METHODS), method)


def length_report(records: Sequence[GenerationRecord], scores: Sequence[ItemScore]) -> LengthReport:
    """Reduce records to per-method length means over correct answers."""
    correct = {(s.method, s.item_id) for s in scores if s.correct}
    scored = {(s.method, s.item_id) for s in scores}
    base_prompt_tokens = {
        r.item_id: r.prompt_token_count for r in records if r.method == METHOD_BASE
    }

    by_method: dict[str, list[GenerationRecord]] = {}
    for record in records:
        if (record.method, record.item_id) not in scored:
            raise ValueError(f"record {record.item_id!r} ({record.method}) has no score")
        by_method.setdefault(record.method, []).append(record)

    rows = []
    for method in sorted(by_method, key=_method_sort_key):
        winners = [r for r in by_method[method] if (method, r.item_id) in correct]
        if not winners:
            rows.append(MethodLengths(method, 0, None, None, None))
            continue
        if method == METHOD_BASE:
            increase = 0.0
        elif method == METHOD_TORSO:
            increase = sum(r.forced_token_count for r in winners) / len(winners)
        else:
            deltas = []
            for record in winners:
                if record.item_id not in base_prompt_tokens:
                    raise ValueError(
                        f"item {record.item_id!r}: no base-method record to diff prompts against"
                    )
                deltas.append(record.prompt_token_count - base_prompt_tokens[record.item_id])
            increase = sum(deltas) / len(deltas)
        generation = sum(r.generated_token_count for r in winners) / len(winners)
        free = sum(r.generated_token_count - r.forced_token_count for r in winners) / len(winners)
        rows.append(MethodLengths(method, len(winners), increase, generation, free))
    return LengthReport(rows)


def length_csv(report: LengthReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(
            [
                "method",
                "n",
                "increased_input_tokens",
                "avg_generation_tokens",
                "avg_generation_tokens_free",
            ]
        )
        for row in report.rows:
            writer.writerow(
                [
                    row.method,
                    row.n,
                    "" if row.increased_input_tokens is None else format_float(row.increased_input_tokens),
                    "" if row.avg_generation_tokens is None else format_float(row.avg_generation_tokens),
                    "" if row.avg_generation_tokens_free is None else format_float(row.avg_generation_tokens_free),
                ]
            )


def plot_lengths(report: LengthReport, path: str | Path) -> None:
    """Stacked bar chart (input overhead + generation length) as SVG.

    Output is byte-deterministic: fixed hash salt, no date metadata.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "tdec"
    methods = [row.method for row in report.rows]
    increases = [row.increased_input_tokens or 0.0 for row in report.rows]
    generations = [row.avg_generation_tokens or 0.0 for row in report.rows]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(methods, increases, label="increased input length", color="#9ecae1")
    ax.bar(methods, generations, bottom=increases, label="avg generation length", color="#08519c")
    ax.set_ylabel("tokens")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
