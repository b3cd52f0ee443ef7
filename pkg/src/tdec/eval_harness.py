"""Exact-match scoring of generation records against gold answers.

Template records are scored on the answer span alone. Baseline records have
no tags, so extraction falls back to task-aware rules: last standalone
option label for multiple choice, last number (commas/currency stripped)
for numeric, final non-empty line for free text.
"""

from __future__ import annotations

import csv
import json
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyBenchmarkError
from .generator import METHOD_TORSO, GenerationRecord

TASK_MULTIPLE_CHOICE = "multiple_choice"
TASK_NUMERIC = "numeric"
TASK_FREE_TEXT = "free_text"
TASK_TYPES = (TASK_MULTIPLE_CHOICE, TASK_NUMERIC, TASK_FREE_TEXT)

_NUMBER_RE = re.compile(r"[-+]?[$€£]?\d[\d,]*(?:\.\d+)?")
_CURRENCY = "$€£"


@dataclass(frozen=True)
class Choice:
    label: str
    text: str = ""


@dataclass
class EvalItem:
    """One benchmark question with its gold answer."""

    id: str
    question: str
    gold: str
    task_type: str
    benchmark: str
    choices: list[Choice] | None = None

    def __post_init__(self) -> None:
        if self.task_type not in TASK_TYPES:
            raise ValueError(f"unknown task_type {self.task_type!r}")
        if self.task_type == TASK_MULTIPLE_CHOICE:
            if not self.choices or len(self.choices) < 2:
                raise ValueError(f"item {self.id}: multiple_choice needs >= 2 choices")
            labels = [c.label for c in self.choices]
            if self.gold not in labels:
                raise ValueError(f"item {self.id}: gold {self.gold!r} not among labels {labels}")
        if self.task_type == TASK_NUMERIC and parse_number(self.gold) is None:
            raise ValueError(f"item {self.id}: gold {self.gold!r} does not parse as a number")

    @classmethod
    def from_json_dict(cls, data: dict) -> "EvalItem":
        choices = data.get("choices")
        if choices is not None:
            choices = [Choice(**c) for c in choices]
        return cls(
            id=data["id"],
            question=data["question"],
            gold=data["gold"],
            task_type=data["task_type"],
            benchmark=data["benchmark"],
            choices=choices,
        )


def load_items(path: str | Path) -> list[EvalItem]:
    items = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                items.append(EvalItem.from_json_dict(json.loads(line)))
    return items


_STRIPPABLE = string.punctuation.translate(str.maketrans("", "", "-+.")) + string.whitespace


def parse_number(text: str) -> float | None:
    """Float value of a number string, tolerating commas/currency symbols."""
    cleaned = text.strip().replace(",", "").translate(str.maketrans("", "", _CURRENCY))
    cleaned = cleaned.strip(_STRIPPABLE)
    try:
        return float(cleaned)
    except ValueError:
        return None


def normalize(text: str) -> str:
    """Trim, strip surrounding punctuation, case-fold."""
    return text.strip().strip(string.punctuation + string.whitespace).casefold()


def extract_candidate(record: GenerationRecord, item: EvalItem) -> str | None:
    """Candidate answer for scoring; None when nothing extractable."""
    if record.item_id != item.id:
        raise ValueError(f"record {record.item_id!r} does not match item {item.id!r}")
    if record.method == METHOD_TORSO:
        return record.answer_text
    output = record.rationale_text
    if item.task_type == TASK_MULTIPLE_CHOICE:
        labels = [c.label for c in item.choices]
        pattern = re.compile(
            r"(?<![A-Za-z0-9])(" + "|".join(re.escape(l) for l in labels) + r")(?![A-Za-z0-9])",
            re.IGNORECASE,
        )
        matches = pattern.findall(output)
        if not matches:
            return None
        matched = matches[-1]
        for label in labels:  # canonicalize case to the item's label
            if label.casefold() == matched.casefold():
                return label
        return matched
    if item.task_type == TASK_NUMERIC:
        matches = _NUMBER_RE.findall(output)
        if not matches:
            return None
        return matches[-1].replace(",", "").translate(str.maketrans("", "", _CURRENCY))
    lines = [line.strip() for line in output.splitlines() if line.strip()]
    return lines[-1] if lines else None


def exact_match(candidate: str | None, item: EvalItem) -> int:
    """1 iff the normalized candidate equals the normalized gold."""
    if candidate is None:
        return 0
    if item.task_type == TASK_NUMERIC:
        cand_value = parse_number(candidate)
        gold_value = parse_number(item.gold)
        if cand_value is not None and gold_value is not None:
            return int(cand_value == gold_value)
    return int(normalize(candidate) == normalize(item.gold))


@dataclass(frozen=True)
class ItemScore:
    item_id: str
    benchmark: str
    method: str
    correct: int
    unparsed: bool


def score_records(records: Sequence[GenerationRecord], items: Sequence[EvalItem]) -> list[ItemScore]:
    """Score every record against its item (matched by id)."""
    by_id = {item.id: item for item in items}
    scores = []
    for record in records:
        if record.item_id not in by_id:
            raise ValueError(f"no dataset item with id {record.item_id!r}")
        item = by_id[record.item_id]
        candidate = extract_candidate(record, item)
        scores.append(
            ItemScore(
                item_id=record.item_id,
                benchmark=item.benchmark,
                method=record.method,
                correct=exact_match(candidate, item),
                unparsed=candidate is None,
            )
        )
    return scores


@dataclass
class BenchmarkScore:
    benchmark: str
    correct: int
    total: int
    unparsed: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


@dataclass
class ScoreReport:
    """Per-benchmark accuracies plus the unweighted macro average."""

    model: str
    method: str
    benchmarks: list[BenchmarkScore]

    @property
    def macro_average(self) -> float:
        return macro_average([b.accuracy for b in self.benchmarks])

    @property
    def weighted_average(self) -> float:
        return weighted_average(
            [b.accuracy for b in self.benchmarks], [b.total for b in self.benchmarks]
        )

    @property
    def correct(self) -> int:
        return sum(b.correct for b in self.benchmarks)

    @property
    def total(self) -> int:
        return sum(b.total for b in self.benchmarks)


def macro_average(accuracies: Sequence[float]) -> float:
    """Unweighted mean over benchmarks."""
    if not accuracies:
        raise EmptyBenchmarkError("no benchmark accuracies to average")
    return sum(accuracies) / len(accuracies)


def weighted_average(accuracies: Sequence[float], weights: Sequence[float]) -> float:
    """Mean weighted by per-benchmark item counts (pooled accuracy)."""
    if not accuracies or len(accuracies) != len(weights):
        raise EmptyBenchmarkError("accuracies and weights must be non-empty and aligned")
    total = sum(weights)
    if total <= 0:
        raise EmptyBenchmarkError("weights must sum to a positive value")
    return sum(a * w for a, w in zip(accuracies, weights)) / total


def aggregate(scores: Iterable[ItemScore], model: str, method: str) -> ScoreReport:
    """Reduce item scores to per-benchmark counts; order-independent."""
    buckets: dict[str, BenchmarkScore] = {}
    for score in scores:
        bucket = buckets.setdefault(score.benchmark, BenchmarkScore(score.benchmark, 0, 0, 0))
        bucket.correct += score.correct
        bucket.total += 1
        bucket.unparsed += int(score.unparsed)
    if not buckets:
        raise EmptyBenchmarkError("no scores to aggregate")
    return ScoreReport(model, method, [buckets[name] for name in sorted(buckets)])


def format_float(value: float) -> str:
    return f"{value:.6g}"


def report_to_csv(reports: Sequence[ScoreReport], path: str | Path) -> None:
    """Columns model,method,benchmark,correct,total,accuracy plus one
    macro_avg summary row per (model, method)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["model", "method", "benchmark", "correct", "total", "accuracy"])
        for report in reports:
            for bench in report.benchmarks:
                writer.writerow(
                    [
                        report.model,
                        report.method,
                        bench.benchmark,
                        bench.correct,
                        bench.total,
                        format_float(bench.accuracy),
                    ]
                )
            writer.writerow(
                [
                    report.model,
                    report.method,
                    "macro_avg",
                    report.correct,
                    report.total,
                    format_float(report.macro_average),
                ]
            )
