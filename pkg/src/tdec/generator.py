"""Decode-loop driver: prompt assembly, per-step constrain/sample/observe,
and span extraction, producing one GenerationRecord per item.

Template runs add nothing to the input prompt — every injected token is
decode-time — so a template prompt is byte-identical to the base prompt for
the same item. Baselines differ only in prompt construction (shots, the
zero-shot cue phrase) and sample freely until EOS or budget.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .backend import LanguageModelBackend, Tokenizer
from .errors import BackendError, InconsistentMethodError, MalformedOutputError
from .sampling import SamplingParams, make_rng, sample
from .template_fsm import (
    DEFAULT_MIN_ANSWER_TOKENS,
    EmittedToken,
    Phase,
    TAG_EOS,
    TemplateSpec,
    apply_constraint,
    new_controller,
)
from . import template_fsm

METHOD_BASE = "base"
METHOD_COT_ZERO = "cot_zero"
METHOD_COT = "cot"
METHOD_TOT = "tot"
METHOD_LTM = "ltm"
METHOD_TORSO = "torso"

METHODS = (METHOD_BASE, METHOD_COT_ZERO, METHOD_COT, METHOD_TOT, METHOD_LTM, METHOD_TORSO)

# Note the U+2019 apostrophe; the cue must match byte-for-byte.
ZERO_SHOT_COT_SUFFIX = "Let’s think step by step."

# Segment tag for free baseline output (baselines have no template phases).
TAG_TEXT = "text"


@dataclass
class PromptAssembly:
    """Everything that goes into one prompt, tagged with the method."""

    user_query: str
    method: str
    system_prefix: str = ""
    shots: list[tuple[str, str, str]] = field(default_factory=list)
    suffix: str = ""

    def validate(self) -> None:
        if self.method not in METHODS:
            raise InconsistentMethodError(f"unknown method {self.method!r}")
        if self.method == METHOD_TORSO and (self.shots or self.suffix):
            raise InconsistentMethodError("torso prompts take no shots and no suffix")
        if self.method == METHOD_COT_ZERO:
            if self.shots:
                raise InconsistentMethodError("cot_zero prompts take no shots")
            if self.suffix != ZERO_SHOT_COT_SUFFIX:
                raise InconsistentMethodError(
                    f"cot_zero suffix must be {ZERO_SHOT_COT_SUFFIX!r}, got {self.suffix!r}"
                )


def _shot_block(question: str, rationale: str, answer: str) -> str:
    return f"Q: {question}\nA: {rationale}\nAnswer: {answer}"


def assemble_prompt(pa: PromptAssembly) -> str:
    """Concatenate system prefix, rendered shots, query, and suffix.

    With no shots and no suffix the prompt is exactly
    system_prefix + user_query.
    """
    pa.validate()
    parts = [pa.system_prefix]
    for question, rationale, answer in pa.shots:
        parts.append(_shot_block(question, rationale, answer))
        parts.append("\n\n")
    parts.append(pa.user_query)
    if pa.suffix:
        parts.append("\n")
        parts.append(pa.suffix)
    return "".join(parts)


@dataclass
class GenerationRecord:
    """Full per-item trace of one generation run."""

    item_id: str
    method: str
    prompt_text: str
    prompt_token_count: int
    tokens: list[EmittedToken]
    rationale_text: str
    answer_text: str
    generated_token_count: int
    forced_token_count: int
    terminated_by: str
    seed: int

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, data: dict) -> "GenerationRecord":
        tokens = [EmittedToken(**t) for t in data["tokens"]]
        return cls(**{**data, "tokens": tokens})


def extract_fields(text: str, spec: TemplateSpec) -> tuple[str, str]:
    """Return the rationale and answer spans between the markers.

    Splits at the first close-marker occurrence so adversarial inner text
    cannot derail extraction; trailing content after answer-close (such as
    the decoded EOS symbol) is ignored.
    """
    if not text.startswith(spec.reasoning_open):
        raise MalformedOutputError(f"text does not start with {spec.reasoning_open!r}")
    body = text[len(spec.reasoning_open):]
    close_at = body.find(spec.reasoning_close)
    if close_at < 0:
        raise MalformedOutputError(f"missing {spec.reasoning_close!r}")
    rationale = body[:close_at]
    rest = body[close_at + len(spec.reasoning_close):]
    open_at = rest.find(spec.answer_open)
    if open_at < 0:
        raise MalformedOutputError(f"missing {spec.answer_open!r} after {spec.reasoning_close!r}")
    rest = rest[open_at + len(spec.answer_open):]
    end_at = rest.find(spec.answer_close)
    if end_at < 0:
        raise MalformedOutputError(f"missing {spec.answer_close!r}")
    return rationale, rest[:end_at]


def _step_logits(backend: LanguageModelBackend, prefix: list[int], step: int):
    try:
        return backend.next_logits(prefix)
    except BackendError as exc:
        raise type(exc)(f"decode step {step}: {exc}") from exc


def generate(
    backend: LanguageModelBackend,
    tokenizer: Tokenizer,
    spec: TemplateSpec | None,
    params: SamplingParams,
    pa: PromptAssembly,
    *,
    item_id: str = "",
    min_answer_tokens: int = DEFAULT_MIN_ANSWER_TOKENS,
    literal_close: bool = True,
) -> GenerationRecord:
    """Run one decode loop and return the full record.

    Template runs need `spec`; baseline methods ignore it and sample freely.
    """
    prompt = assemble_prompt(pa)
    prompt_ids = tokenizer.encode(prompt)
    rng = make_rng(params.seed)
    eos = backend.eos_token

    if pa.method == METHOD_TORSO:
        if spec is None:
            raise ValueError("template runs require a TemplateSpec")
        ctrl = new_controller(
            spec,
            params.max_new_tokens,
            min_answer_tokens,
            eos_token_id=eos,
            decode=tokenizer.decode,
            literal_close=literal_close,
        )
        step = 0
        while ctrl.phase is not Phase.DONE:
            constraint = ctrl.next_constraint()
            logits = _step_logits(backend, prompt_ids + ctrl.emitted_ids, step)
            logits = apply_constraint(logits, constraint)
            token = sample(logits, params, rng)
            ctrl.observe(token, is_eos=token == eos)
            step += 1
        rationale, answer = extract_fields(ctrl.decoded_text, spec)
        return GenerationRecord(
            item_id=item_id,
            method=pa.method,
            prompt_text=prompt,
            prompt_token_count=len(prompt_ids),
            tokens=list(ctrl.emitted),
            rationale_text=rationale,
            answer_text=answer,
            generated_token_count=len(ctrl.emitted),
            forced_token_count=ctrl.forced_token_count,
            terminated_by=ctrl.wrapup_trigger,
            seed=params.seed,
        )

    # Baseline: plain sampling until EOS or budget, no forcing anywhere.
    emitted: list[EmittedToken] = []
    ids: list[int] = []
    terminated_by = template_fsm.TRIGGER_BUDGET
    for step in range(params.max_new_tokens):
        logits = _step_logits(backend, prompt_ids + ids, step)
        token = sample(logits, params, rng)
        if token == eos:
            emitted.append(EmittedToken(token, TAG_EOS, False))
            ids.append(token)
            terminated_by = template_fsm.TRIGGER_EOS
            break
        emitted.append(EmittedToken(token, TAG_TEXT, False))
        ids.append(token)
    text_ids = ids[:-1] if terminated_by == template_fsm.TRIGGER_EOS else ids
    return GenerationRecord(
        item_id=item_id,
        method=pa.method,
        prompt_text=prompt,
        prompt_token_count=len(prompt_ids),
        tokens=emitted,
        rationale_text=tokenizer.decode(text_ids),
        answer_text="",
        generated_token_count=len(emitted),
        forced_token_count=0,
        terminated_by=terminated_by,
        seed=params.seed,
    )


def write_records(records: Sequence[GenerationRecord], path: str | Path) -> None:
    """JSON Lines, one record per line, insertion order preserved."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record.to_json_dict(), ensure_ascii=False))
            f.write("\n")


def read_records(path: str | Path) -> list[GenerationRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(GenerationRecord.from_json_dict(json.loads(line)))
    return records
