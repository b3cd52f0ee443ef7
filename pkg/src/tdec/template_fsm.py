"""Finite-state controller that forces the reasoning/answer template.

The controller decides at every decoding step whether the next token is
forced (and which) or free. It opens generation with the reasoning-open
marker, intercepts the model's EOS attempt at the end of the rationale to
inject reasoning-close plus answer-open, guarantees the answer-close marker,
and finally forces a single terminal EOS. Marker strings usually tokenize to
several ids, so forcing walks a queue one token per step; forced tokens are
fed back autoregressively like any other context.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BudgetTooSmallError, ConstraintViolationError, InvalidStateError

DEFAULT_REASONING_OPEN = "<reasoning>"
DEFAULT_REASONING_CLOSE = "</reasoning>"
DEFAULT_ANSWER_OPEN = "<answer>"
DEFAULT_ANSWER_CLOSE = "</answer>"

DEFAULT_MIN_ANSWER_TOKENS = 32

# Segment tags attached to every emitted token.
TAG_OPEN = "open"
TAG_REASONING = "reasoning"
TAG_CLOSE = "close"
TAG_ANSWER_OPEN = "answer_open"
TAG_ANSWER = "answer"
TAG_ANSWER_CLOSE = "answer_close"
TAG_EOS = "eos"

# What ended the rationale (or, for the answer span, the answer).
TRIGGER_EOS = "eos"
TRIGGER_BUDGET = "budget"
TRIGGER_LITERAL_CLOSE = "literal_close"


class Phase(enum.Enum):
    """Controller phases, in the only order they can occur."""

    FORCING_REASONING_OPEN = 0
    REASONING = 1
    FORCING_WRAP_UP = 2
    ANSWERING = 3
    FORCING_ANSWER_CLOSE = 4
    FORCING_EOS = 5
    DONE = 6

    @property
    def is_forcing(self) -> bool:
        return self in (
            Phase.FORCING_REASONING_OPEN,
            Phase.FORCING_WRAP_UP,
            Phase.FORCING_ANSWER_CLOSE,
            Phase.FORCING_EOS,
        )


@dataclass(frozen=True)
class StepConstraint:
    """Either Forced(token id) or Free (token is None)."""

    token: int | None

    @property
    def is_forced(self) -> bool:
        return self.token is not None


FREE = StepConstraint(None)


def forced(token: int) -> StepConstraint:
    return StepConstraint(token)


@dataclass(frozen=True)
class TemplateSpec:
    """The four marker strings with their token-id expansions."""

    reasoning_open: str
    reasoning_close: str
    answer_open: str
    answer_close: str
    reasoning_open_ids: tuple[int, ...]
    reasoning_close_ids: tuple[int, ...]
    answer_open_ids: tuple[int, ...]
    answer_close_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        markers = (
            self.reasoning_open,
            self.reasoning_close,
            self.answer_open,
            self.answer_close,
        )
        if any(not m for m in markers):
            raise ValueError("marker strings must be non-empty")
        if len(set(markers)) != 4:
            raise ValueError(f"marker strings must be pairwise distinct, got {markers}")
        for name, ids in self._id_fields():
            if not ids:
                raise ValueError(f"{name} tokenizes to an empty id sequence")

    def _id_fields(self) -> list[tuple[str, tuple[int, ...]]]:
        return [
            ("reasoning_open", self.reasoning_open_ids),
            ("reasoning_close", self.reasoning_close_ids),
            ("answer_open", self.answer_open_ids),
            ("answer_close", self.answer_close_ids),
        ]

    @property
    def marker_token_count(self) -> int:
        return sum(len(ids) for _, ids in self._id_fields())

    @classmethod
    def from_strings(
        cls,
        tokenizer,
        reasoning_open: str = DEFAULT_REASONING_OPEN,
        reasoning_close: str = DEFAULT_REASONING_CLOSE,
        answer_open: str = DEFAULT_ANSWER_OPEN,
        answer_close: str = DEFAULT_ANSWER_CLOSE,
    ) -> "TemplateSpec":
        """Tokenize the four markers and check they round-trip exactly."""
        markers = (reasoning_open, reasoning_close, answer_open, answer_close)
        encoded = []
        for marker in markers:
            ids = tuple(tokenizer.encode(marker))
            decoded = tokenizer.decode(list(ids))
            if decoded != marker:
                raise ValueError(
                    f"marker {marker!r} does not round-trip through the tokenizer "
                    f"(decoded {decoded!r})"
                )
            encoded.append(ids)
        return cls(*markers, *encoded)


@dataclass
class EmittedToken:
    """One generated token with its segment tag and whether it was forced."""

    token_id: int
    tag: str
    forced: bool


class DecodingController:
    """Single-sequence template FSM; drive with next_constraint()/observe().

    Not thread-safe for concurrent driving; batch runners use one controller
    per sequence.
    """

    def __init__(
        self,
        spec: TemplateSpec,
        max_new_tokens: int,
        min_answer_tokens: int,
        *,
        eos_token_id: int,
        decode: Callable[[list[int]], str],
        literal_close: bool = True,
    ) -> None:
        reserve = (
            len(spec.reasoning_close_ids)
            + len(spec.answer_open_ids)
            + min_answer_tokens
            + len(spec.answer_close_ids)
            + 1  # terminal EOS
        )
        needed = len(spec.reasoning_open_ids) + reserve
        if max_new_tokens < needed:
            raise BudgetTooSmallError(
                f"max_new_tokens={max_new_tokens} cannot fit the markers, "
                f"min_answer_tokens={min_answer_tokens} and EOS (needs >= {needed})"
            )
        self.spec = spec
        self.phase = Phase.FORCING_REASONING_OPEN
        self.budget = max_new_tokens
        self.reserve = reserve
        self.min_answer_tokens = min_answer_tokens
        self.eos_token_id = eos_token_id
        self.literal_close = literal_close
        self.emitted: list[EmittedToken] = []
        self.decoded_text = ""
        self.wrapup_trigger: str | None = None
        self.answer_end_trigger: str | None = None
        self._decode = decode
        self._ids: list[int] = []
        self._queue: list[int] = list(spec.reasoning_open_ids)
        self._queue_tags: list[str] = [TAG_OPEN] * len(spec.reasoning_open_ids)

    @property
    def forced_queue(self) -> tuple[int, ...]:
        return tuple(self._queue)

    @property
    def emitted_ids(self) -> list[int]:
        return list(self._ids)

    @property
    def forced_token_count(self) -> int:
        return sum(1 for t in self.emitted if t.forced)

    def next_constraint(self) -> StepConstraint:
        """Constraint for the upcoming step; may fire the budget triggers."""
        if self.phase is Phase.DONE:
            raise InvalidStateError("controller is done; no further steps")
        if self.phase.is_forcing:
            return forced(self._queue[0])
        if self.phase is Phase.REASONING:
            if self.budget <= self.reserve:
                self._enter_wrap_up(TRIGGER_BUDGET, include_close=True)
                return forced(self._queue[0])
            return FREE
        # Phase.ANSWERING: keep room for answer-close plus the terminal EOS.
        if self.budget <= len(self.spec.answer_close_ids) + 1:
            self._start_answer_close(TRIGGER_BUDGET)
            return forced(self._queue[0])
        return FREE

    def observe(self, token: int, is_eos: bool) -> Phase:
        """Record the token emitted for the last constraint and transition.

        EOS attempts in free phases are suppressed (the token is dropped, so
        the model never conditions on a mid-sequence EOS); forcing phases
        ignore is_eos because the queue wins.
        """
        if self.phase is Phase.DONE:
            raise InvalidStateError("controller is done; no further tokens")
        if self.phase.is_forcing:
            expected = self._queue[0]
            if token != expected:
                raise ConstraintViolationError(
                    f"phase {self.phase.name} forced token {expected}, observed {token}"
                )
            self._queue.pop(0)
            self._append(token, self._queue_tags.pop(0), forced_flag=True)
            if not self._queue:
                self._advance_after_queue()
            return self.phase
        if self.phase is Phase.REASONING:
            if is_eos:
                self._enter_wrap_up(TRIGGER_EOS, include_close=True)
                return self.phase
            self._append(token, TAG_REASONING, forced_flag=False)
            if self.literal_close and self.decoded_text.endswith(self.spec.reasoning_close):
                self._enter_wrap_up(TRIGGER_LITERAL_CLOSE, include_close=False)
            return self.phase
        # Phase.ANSWERING
        if is_eos:
            self._start_answer_close(TRIGGER_EOS)
            return self.phase
        self._append(token, TAG_ANSWER, forced_flag=False)
        if self.literal_close and self.decoded_text.endswith(self.spec.answer_close):
            self.answer_end_trigger = TRIGGER_LITERAL_CLOSE
            self._start_eos()
        return self.phase

    def _append(self, token: int, tag: str, forced_flag: bool) -> None:
        self.emitted.append(EmittedToken(token, tag, forced_flag))
        self._ids.append(token)
        self.decoded_text = self._decode(self._ids)
        self.budget -= 1

    def _advance_after_queue(self) -> None:
        if self.phase is Phase.FORCING_REASONING_OPEN:
            self.phase = Phase.REASONING
        elif self.phase is Phase.FORCING_WRAP_UP:
            self.phase = Phase.ANSWERING
        elif self.phase is Phase.FORCING_ANSWER_CLOSE:
            self._start_eos()
        else:  # Phase.FORCING_EOS
            self.phase = Phase.DONE

    def _enter_wrap_up(self, trigger: str, include_close: bool) -> None:
        self.wrapup_trigger = trigger
        self.phase = Phase.FORCING_WRAP_UP
        self._queue = []
        self._queue_tags = []
        if include_close:
            self._queue += list(self.spec.reasoning_close_ids)
            self._queue_tags += [TAG_CLOSE] * len(self.spec.reasoning_close_ids)
        self._queue += list(self.spec.answer_open_ids)
        self._queue_tags += [TAG_ANSWER_OPEN] * len(self.spec.answer_open_ids)

    def _start_answer_close(self, trigger: str) -> None:
        self.answer_end_trigger = trigger
        self.phase = Phase.FORCING_ANSWER_CLOSE
        self._queue = list(self.spec.answer_close_ids)
        self._queue_tags = [TAG_ANSWER_CLOSE] * len(self.spec.answer_close_ids)

    def _start_eos(self) -> None:
        self.phase = Phase.FORCING_EOS
        self._queue = [self.eos_token_id]
        self._queue_tags = [TAG_EOS]


def new_controller(
    spec: TemplateSpec,
    max_new_tokens: int,
    min_answer_tokens: int = DEFAULT_MIN_ANSWER_TOKENS,
    *,
    eos_token_id: int,
    decode: Callable[[list[int]], str],
    literal_close: bool = True,
) -> DecodingController:
    """Fresh controller in the forced-open phase."""
    return DecodingController(
        spec,
        max_new_tokens,
        min_answer_tokens,
        eos_token_id=eos_token_id,
        decode=decode,
        literal_close=literal_close,
    )


def next_constraint(ctrl: DecodingController) -> StepConstraint:
    return ctrl.next_constraint()


def observe(ctrl: DecodingController, token: int, is_eos: bool) -> Phase:
    return ctrl.observe(token, is_eos)


def apply_constraint(logits: np.ndarray, constraint: StepConstraint) -> np.ndarray:
    """Apply a step constraint to a score vector.

    Free leaves the vector untouched. Forced(t) returns a vector with the
    maximum finite score at t and -inf everywhere else, so any downstream
    sampler picks t with probability 1 regardless of temperature/top-k/top-p.
    """
    if not constraint.is_forced:
        return logits
    scores = np.asarray(logits, dtype=np.float64)
    token = constraint.token
    if not 0 <= token < scores.size:
        raise IndexError(f"forced token {token} outside vocabulary of size {scores.size}")
    out = np.full_like(scores, -np.inf)
    out[token] = np.finfo(np.float64).max
    return out
