"""Pairwise judging protocol: prompts, verdicts, tallies, and the endpoint."""

from __future__ import annotations

import random
from pathlib import Path

import pytest

from conftest import http_server
from reference_tables import PAIRWISE_COUNT_ROWS
from tdec.errors import InsufficientEligibleItemsError, TransportError
from tdec.eval_harness import Choice, EvalItem
from tdec.generator import GenerationRecord
from tdec.judge_harness import (
    HttpJudgeClient,
    JudgeEndpointConfig,
    JudgeTally,
    SYMBOL_FIRST,
    SYMBOL_SECOND,
    SYMBOL_TIE,
    build_judge_prompt,
    eligible_item_ids,
    map_outcome,
    parse_verdict,
    run_pairwise,
    tally_outcomes,
    tally_to_csv,
)

GOLDEN = Path(__file__).parent / "golden"


# --- fixtures ---

def make_items(n, wrong_torso=(), wrong_baseline=()):
    """n MC items; torso/baseline records correct unless listed as wrong."""
    items, torso_records, baseline_records = [], [], []
    for i in range(n):
        item_id = f"item{i:03d}"
        items.append(
            EvalItem(
                id=item_id,
                question=f"question {i:03d}?",
                gold="A",
                task_type="multiple_choice",
                benchmark="bench",
                choices=[Choice("A"), Choice("B")],
            )
        )
        torso_prefix = "a" if i % 3 == 0 else "t"  # mixes wins and losses
        torso_records.append(
            GenerationRecord(
                item_id=item_id, method="torso", prompt_text="", prompt_token_count=0,
                tokens=[], rationale_text=f"{torso_prefix}{i:03d} steps toward the result",
                answer_text="A" if i not in wrong_torso else "B",
                generated_token_count=0, forced_token_count=0, terminated_by="eos", seed=0,
            )
        )
        baseline_records.append(
            GenerationRecord(
                item_id=item_id, method="base", prompt_text="", prompt_token_count=0,
                tokens=[],
                rationale_text=(
                    f"b{i:03d} musings. So the answer is "
                    + ("A" if i not in wrong_baseline else "B")
                ),
                answer_text="", generated_token_count=0, forced_token_count=0,
                terminated_by="eos", seed=0,
            )
        )
    return items, torso_records, baseline_records


class ConstantJudge:
    def __init__(self, reply):
        self.reply = reply
        self.calls = 0

    def judge(self, prompt):
        self.calls += 1
        return self.reply


class LexicographicJudge:
    """Prefers the lexicographically smaller rationale; equal means tie."""

    def judge(self, prompt):
        lines = prompt.splitlines()
        a = next(l for l in lines if l.startswith(SYMBOL_FIRST + " "))[2:]
        b = next(l for l in lines if l.startswith(SYMBOL_SECOND + " "))[2:]
        if a == b:
            return SYMBOL_TIE
        return SYMBOL_FIRST if a < b else SYMBOL_SECOND


# --- prompt ---

def test_prompt_orders_rationales():
    prompt = build_judge_prompt("q?", "alpha", "beta")
    assert prompt.index(SYMBOL_FIRST + " alpha") < prompt.index(SYMBOL_SECOND + " beta")
    reversed_prompt = build_judge_prompt("q?", "beta", "alpha")
    assert SYMBOL_SECOND + " alpha" in reversed_prompt


def test_prompt_matches_golden_bytes():
    golden = (GOLDEN / "judge_prompt.txt").read_text(encoding="utf-8")
    assert build_judge_prompt("why?", "because", "since") == golden


def test_prompt_rejects_empty_inputs():
    with pytest.raises(ValueError):
        build_judge_prompt("", "a", "b")
    with pytest.raises(ValueError):
        build_judge_prompt("q", "a", "")


# --- verdicts ---

def test_parse_verdict_cases():
    assert parse_verdict(SYMBOL_SECOND) == "second"
    assert parse_verdict(f"The answer is {SYMBOL_TIE}.") == "tie"
    assert parse_verdict(f"{SYMBOL_FIRST} or {SYMBOL_SECOND}") == "invalid"
    assert parse_verdict("no symbol") == "invalid"
    assert parse_verdict(SYMBOL_FIRST + SYMBOL_FIRST) == "first"


def test_map_outcome_folds_order():
    assert map_outcome("first", "original") == "win_for_torso"
    assert map_outcome("second", "original") == "lose_for_torso"
    assert map_outcome("first", "reversed") == "lose_for_torso"
    assert map_outcome("second", "reversed") == "win_for_torso"
    assert map_outcome("tie", "reversed") == "tie"
    assert map_outcome("invalid", "original") == "invalid"


# --- tally arithmetic ---

def test_published_tally_ratios():
    tally = JudgeTally(win=1103, tie=610, lose=287, invalid=0)
    assert tally.total == 2000
    assert tally.win_ratio == pytest.approx(0.5515)


def test_all_published_pairwise_rows_sum_to_2000():
    assert len(PAIRWISE_COUNT_ROWS) == 15
    for key, (win, tie, lose) in PAIRWISE_COUNT_ROWS.items():
        assert win + tie + lose == 2000, key


# --- protocol ---

def test_constant_tie_judge_yields_all_ties():
    items, torso_records, baseline_records = make_items(8)
    judge = ConstantJudge(SYMBOL_TIE)
    tally, comparisons = run_pairwise(
        items, torso_records, baseline_records, judge, samples=5, repetitions=5, seed=1
    )
    assert judge.calls == 5 * 2 * 5
    assert (tally.win, tally.tie, tally.lose, tally.invalid) == (0, 50, 0, 0)
    assert len(comparisons) == 50


def test_eligibility_requires_both_correct():
    items, torso_records, baseline_records = make_items(6, wrong_torso={1}, wrong_baseline={2, 3})
    eligible = eligible_item_ids(items, torso_records, baseline_records)
    assert eligible == ["item000", "item004", "item005"]


def test_insufficient_eligible_items():
    items, torso_records, baseline_records = make_items(4, wrong_torso={0, 1})
    with pytest.raises(InsufficientEligibleItemsError):
        run_pairwise(items, torso_records, baseline_records, ConstantJudge(SYMBOL_TIE),
                     samples=3, repetitions=1)


def test_item_sampling_is_seed_deterministic():
    items, torso_records, baseline_records = make_items(30)
    judge = ConstantJudge(SYMBOL_TIE)
    _, first = run_pairwise(items, torso_records, baseline_records, judge,
                            samples=10, repetitions=2, seed=42)
    _, second = run_pairwise(items, torso_records, baseline_records, judge,
                             samples=10, repetitions=2, seed=42)
    assert [c.item_id for c in first] == [c.item_id for c in second]
    _, third = run_pairwise(items, torso_records, baseline_records, judge,
                            samples=10, repetitions=2, seed=43)
    assert [c.item_id for c in first] != [c.item_id for c in third]


def test_lexicographic_judge_matches_brute_force_oracle():
    items, torso_records, baseline_records = make_items(20)
    samples, repetitions, seed = 12, 5, 7
    tally, comparisons = run_pairwise(
        items, torso_records, baseline_records, LexicographicJudge(),
        samples=samples, repetitions=repetitions, seed=seed,
    )

    # Independent re-derivation of the whole protocol over the same fixtures.
    eligible = [i.id for i in items]  # all correct by construction
    chosen = random.Random(seed).sample(eligible, samples)
    torso_text = {r.item_id: r.rationale_text for r in torso_records}
    base_text = {r.item_id: r.rationale_text for r in baseline_records}
    expected = JudgeTally()
    for item_id in chosen:
        for order in ("original", "reversed"):
            a, b = (
                (torso_text[item_id], base_text[item_id])
                if order == "original"
                else (base_text[item_id], torso_text[item_id])
            )
            if a == b:
                verdict = "tie"
            else:
                verdict = "first" if a < b else "second"
            for _ in range(repetitions):
                if verdict == "tie":
                    expected.tie += 1
                elif (verdict == "first") == (order == "original"):
                    expected.win += 1
                else:
                    expected.lose += 1
    assert (tally.win, tally.tie, tally.lose, tally.invalid) == (
        expected.win, expected.tie, expected.lose, expected.invalid,
    )
    assert tally.total == samples * 2 * repetitions


def test_order_reversal_symmetry():
    items, torso_records, baseline_records = make_items(20)
    tally, comparisons = run_pairwise(
        items, torso_records, baseline_records, LexicographicJudge(),
        samples=10, repetitions=3, seed=3,
    )
    flip = {SYMBOL_FIRST: SYMBOL_SECOND, SYMBOL_SECOND: SYMBOL_FIRST}
    mirrored = []
    for c in comparisons:
        flipped_raw = "".join(flip.get(ch, ch) for ch in c.raw_verdict)
        flipped_order = "reversed" if c.order == "original" else "original"
        mirrored.append(map_outcome(parse_verdict(flipped_raw), flipped_order))
    original = tally_outcomes(comparisons)
    swapped = JudgeTally()
    for outcome in mirrored:
        swapped.add(outcome)
    assert (original.win, original.tie, original.lose, original.invalid) == (
        swapped.win, swapped.tie, swapped.lose, swapped.invalid,
    )


class GarbageThenValidJudge:
    def __init__(self, garbage_rounds):
        self.garbage_rounds = garbage_rounds
        self.calls = 0

    def judge(self, prompt):
        self.calls += 1
        if self.calls <= self.garbage_rounds:
            return "hmm, hard to say"
        return SYMBOL_FIRST


def test_invalid_verdict_retried_once_then_used():
    items, torso_records, baseline_records = make_items(3)
    judge = GarbageThenValidJudge(garbage_rounds=1)
    tally, _ = run_pairwise(items, torso_records, baseline_records, judge,
                            samples=1, repetitions=1, seed=0)
    assert judge.calls == 3  # 1 garbage + 1 retry, then 1 for the reversed order
    assert tally.invalid == 0


def test_always_invalid_counts_as_invalid_not_tie():
    items, torso_records, baseline_records = make_items(3)
    judge = ConstantJudge("shrug")
    tally, _ = run_pairwise(items, torso_records, baseline_records, judge,
                            samples=2, repetitions=2, seed=0)
    assert judge.calls == 16  # every comparison retried exactly once
    assert (tally.win, tally.tie, tally.lose, tally.invalid) == (0, 0, 0, 8)


class FailingJudge:
    def judge(self, prompt):
        raise TransportError("endpoint down")


def test_transport_failures_recorded_as_invalid():
    items, torso_records, baseline_records = make_items(3)
    tally, _ = run_pairwise(items, torso_records, baseline_records, FailingJudge(),
                            samples=2, repetitions=1, seed=0)
    assert tally.invalid == 4
    assert tally.valid == 0
    assert tally.win_ratio is None


def test_concurrent_run_matches_serial():
    items, torso_records, baseline_records = make_items(12)
    serial_tally, serial = run_pairwise(
        items, torso_records, baseline_records, LexicographicJudge(),
        samples=6, repetitions=2, seed=5, concurrency=1,
    )
    pooled_tally, pooled = run_pairwise(
        items, torso_records, baseline_records, LexicographicJudge(),
        samples=6, repetitions=2, seed=5, concurrency=4,
    )
    assert [vars(c) for c in serial] == [vars(c) for c in pooled]
    assert vars(serial_tally) == vars(pooled_tally)


# --- endpoint client ---

def test_http_judge_client_reads_first_choice(monkeypatch):
    seen = {}

    def respond(path, payload):
        seen["payload"] = payload
        return 200, {"choices": [{"message": {"content": SYMBOL_SECOND}}]}

    with http_server(respond) as url:
        client = HttpJudgeClient(JudgeEndpointConfig(base_url=url, model="judge-1"))
        assert client.judge("pick") == SYMBOL_SECOND
    assert seen["payload"]["model"] == "judge-1"
    assert seen["payload"]["messages"] == [{"role": "user", "content": "pick"}]


def test_http_judge_client_sends_bearer_token(monkeypatch):
    import conftest

    monkeypatch.setenv("TDEC_JUDGE_TOKEN", "sekrit")

    def respond(path, payload):
        return 200, {"choices": [{"message": {"content": SYMBOL_TIE}}]}

    with http_server(respond) as url:
        client = HttpJudgeClient(JudgeEndpointConfig(base_url=url, model="j"))
        assert client.judge("p") == SYMBOL_TIE
    assert conftest.LAST_REQUEST_HEADERS.get("Authorization") == "Bearer sekrit"


def test_http_judge_client_retries_then_fails():
    def respond(path, payload):
        return 500, {"error": "down"}

    with http_server(respond) as url:
        client = HttpJudgeClient(
            JudgeEndpointConfig(base_url=url, model="j", max_retries=1,
                                retry_backoff_seconds=0.0)
        )
        with pytest.raises(TransportError):
            client.judge("p")


def test_tally_csv_layout(tmp_path):
    path = tmp_path / "judge.csv"
    tally_to_csv([("toy-model", "vs. base", JudgeTally(3, 2, 1, 0))], path)
    lines = path.read_text().splitlines()
    assert lines == [
        "model,comparison,win,tie,lose,invalid",
        "toy-model,vs. base,3,2,1,0",
    ]
