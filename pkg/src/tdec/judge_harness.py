"""Pairwise rationale-quality protocol against a chat-style judge endpoint.

For each sampled item the judge sees both presentation orders, each repeated
a fixed number of times, and the circled-symbol verdict is mapped back
through the order to a win/tie/lose outcome for the template method.
Non-conforming verdicts get one re-ask and are then counted as invalid,
never folded into tie.
"""

from __future__ import annotations

import csv
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import requests

from .errors import InsufficientEligibleItemsError, TransportError
from .eval_harness import EvalItem, exact_match, extract_candidate
from .generator import METHOD_TORSO, GenerationRecord

log = logging.getLogger(__name__)

SYMBOL_FIRST = "①"   # circled one
SYMBOL_SECOND = "②"  # circled two
SYMBOL_TIE = "③"     # circled three

VERDICT_FIRST = "first"
VERDICT_SECOND = "second"
VERDICT_TIE = "tie"
VERDICT_INVALID = "invalid"

ORDER_ORIGINAL = "original"
ORDER_REVERSED = "reversed"

OUTCOME_WIN = "win_for_torso"
OUTCOME_LOSE = "lose_for_torso"
OUTCOME_TIE = "tie"
OUTCOME_INVALID = "invalid"

DEFAULT_SAMPLES = 200
DEFAULT_REPETITIONS = 5


def build_judge_prompt(query: str, a: str, b: str) -> str:
    """The exact pairwise prompt; a is presented first, b second."""
    if not (query and a and b):
        raise ValueError("query and both rationales must be non-empty")
    return (
        f"Choose the better rationale for the given query. "
        f"Answer with {SYMBOL_FIRST}, {SYMBOL_SECOND} or {SYMBOL_TIE} for tie. "
        f"Print only the answer.\n"
        f"Query: {query}\n"
        f"{SYMBOL_FIRST} {a}\n"
        f"{SYMBOL_SECOND} {b}\n"
        f"Answer: "
    )


def parse_verdict(raw: str) -> str:
    """Map a raw judge reply onto first/second/tie; ambiguity is invalid."""
    present = [
        verdict
        for symbol, verdict in (
            (SYMBOL_FIRST, VERDICT_FIRST),
            (SYMBOL_SECOND, VERDICT_SECOND),
            (SYMBOL_TIE, VERDICT_TIE),
        )
        if symbol in raw
    ]
    if len(present) != 1:
        return VERDICT_INVALID
    return present[0]


def map_outcome(verdict: str, order: str) -> str:
    """Fold the presentation order back out of a verdict."""
    if verdict == VERDICT_INVALID:
        return OUTCOME_INVALID
    if verdict == VERDICT_TIE:
        return OUTCOME_TIE
    template_first = order == ORDER_ORIGINAL
    if (verdict == VERDICT_FIRST) == template_first:
        return OUTCOME_WIN
    return OUTCOME_LOSE


@dataclass
class JudgeComparison:
    """One pairwise judgment with everything needed to re-derive its outcome."""

    item_id: str
    rationale_a: str
    rationale_b: str
    method_a: str
    method_b: str
    order: str
    repetition: int
    raw_verdict: str
    outcome: str


@dataclass
class JudgeTally:
    win: int = 0
    tie: int = 0
    lose: int = 0
    invalid: int = 0

    @property
    def total(self) -> int:
        return self.win + self.tie + self.lose + self.invalid

    @property
    def valid(self) -> int:
        return self.win + self.tie + self.lose

    @property
    def win_ratio(self) -> float | None:
        return self.win / self.valid if self.valid else None

    @property
    def tie_ratio(self) -> float | None:
        return self.tie / self.valid if self.valid else None

    @property
    def lose_ratio(self) -> float | None:
        return self.lose / self.valid if self.valid else None

    def add(self, outcome: str) -> None:
        if outcome == OUTCOME_WIN:
            self.win += 1
        elif outcome == OUTCOME_TIE:
            self.tie += 1
        elif outcome == OUTCOME_LOSE:
            self.lose += 1
        else:
            self.invalid += 1


def tally_outcomes(comparisons: Sequence[JudgeComparison]) -> JudgeTally:
    tally = JudgeTally()
    for comparison in comparisons:
        tally.add(comparison.outcome)
    return tally


@runtime_checkable
class JudgeClient(Protocol):
    def judge(self, prompt: str) -> str: ...


@dataclass(frozen=True)
class JudgeEndpointConfig:
    """Chat-completions-style judge endpoint; auth token read from env."""

    base_url: str
    model: str
    token_env: str = "TDEC_JUDGE_TOKEN"
    timeout_seconds: float = 30.0
    max_retries: int = 3
    retry_backoff_seconds: float = 0.05


class HttpJudgeClient:
    """POSTs {"model", "messages"} and reads the first choice's content."""

    def __init__(self, config: JudgeEndpointConfig) -> None:
        self.config = config

    def judge(self, prompt: str) -> str:
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {}
        token = os.environ.get(self.config.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        attempts = self.config.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt > 0:
                log.warning("retrying judge request (attempt %d of %d)", attempt + 1, attempts)
                time.sleep(self.config.retry_backoff_seconds)
            try:
                response = requests.post(
                    self.config.base_url,
                    json=payload,
                    headers=headers,
                    timeout=self.config.timeout_seconds,
                )
                response.raise_for_status()
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
        raise TransportError(f"judge request failed after {attempts} attempts: {last_error}")


def eligible_item_ids(
    items: Sequence[EvalItem],
    torso_records: Sequence[GenerationRecord],
    baseline_records: Sequence[GenerationRecord],
) -> list[str]:
    """Items both methods answered correctly, in dataset order."""
    torso_by_id = {r.item_id: r for r in torso_records}
    baseline_by_id = {r.item_id: r for r in baseline_records}
    eligible = []
    for item in items:
        torso_record = torso_by_id.get(item.id)
        baseline_record = baseline_by_id.get(item.id)
        if torso_record is None or baseline_record is None:
            continue
        if exact_match(extract_candidate(torso_record, item), item) and exact_match(
            extract_candidate(baseline_record, item), item
        ):
            eligible.append(item.id)
    return eligible


def _judge_once(judge: JudgeClient, prompt: str, invalid_retries: int) -> tuple[str, str]:
    """Returns (raw, verdict); re-asks on non-conforming replies."""
    raw = ""
    verdict = VERDICT_INVALID
    for _ in range(invalid_retries + 1):
        try:
            raw = judge.judge(prompt)
        except TransportError as exc:
            log.warning("judge call failed, recording invalid: %s", exc)
            return "", VERDICT_INVALID
        verdict = parse_verdict(raw)
        if verdict != VERDICT_INVALID:
            return raw, verdict
    return raw, verdict


def run_pairwise(
    items: Sequence[EvalItem],
    torso_records: Sequence[GenerationRecord],
    baseline_records: Sequence[GenerationRecord],
    judge: JudgeClient,
    samples: int = DEFAULT_SAMPLES,
    repetitions: int = DEFAULT_REPETITIONS,
    *,
    seed: int = 0,
    invalid_retries: int = 1,
    concurrency: int = 1,
) -> tuple[JudgeTally, list[JudgeComparison]]:
    """Issue samples x 2 x repetitions judgments and tally the outcomes.

    Item sampling is seed-deterministic, every pair is judged in both
    presentation orders, and the reduction is keyed by
    (item, order, repetition) regardless of completion order.
    """
    eligible = eligible_item_ids(items, torso_records, baseline_records)
    if len(eligible) < samples:
        raise InsufficientEligibleItemsError(
            f"need {samples} items correct under both methods, have {len(eligible)}"
        )
    chosen = random.Random(seed).sample(eligible, samples)

    items_by_id = {item.id: item for item in items}
    torso_by_id = {r.item_id: r for r in torso_records}
    baseline_by_id = {r.item_id: r for r in baseline_records}
    baseline_method = baseline_records[0].method if baseline_records else "baseline"

    tasks = []
    for item_id in chosen:
        torso_text = torso_by_id[item_id].rationale_text
        baseline_text = baseline_by_id[item_id].rationale_text
        for order in (ORDER_ORIGINAL, ORDER_REVERSED):
            if order == ORDER_ORIGINAL:
                a, b = torso_text, baseline_text
                method_a, method_b = METHOD_TORSO, baseline_method
            else:
                a, b = baseline_text, torso_text
                method_a, method_b = baseline_method, METHOD_TORSO
            for repetition in range(1, repetitions + 1):
                tasks.append((item_id, order, repetition, a, b, method_a, method_b))

    def run_task(task) -> JudgeComparison:
        item_id, order, repetition, a, b, method_a, method_b = task
        prompt = build_judge_prompt(items_by_id[item_id].question, a, b)
        raw, verdict = _judge_once(judge, prompt, invalid_retries)
        return JudgeComparison(
            item_id=item_id,
            rationale_a=a,
            rationale_b=b,
            method_a=method_a,
            method_b=method_b,
            order=order,
            repetition=repetition,
            raw_verdict=raw,
            outcome=map_outcome(verdict, order),
        )

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            comparisons = list(pool.map(run_task, tasks))
    else:
        comparisons = [run_task(task) for task in tasks]
    return tally_outcomes(comparisons), comparisons



def tally_to_csv(
    rows: Sequence[tuple[str, str, JudgeTally]], path: str | Path
) -> None:
    """Rows of (model, comparison label, tally)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["model", "comparison", "win", "tie", "lose", "invalid"])
        for model, comparison, tally in rows:
            writer.writerow([model, comparison, tally.win, tally.tie, tally.lose, tally.invalid])
