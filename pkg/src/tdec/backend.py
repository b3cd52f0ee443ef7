"""Model and tokenizer abstractions: a deterministic toy table LM for tests
plus an HTTP adapter for any server that exposes per-step logits.

The toy tokenizer is character-level on purpose: marker strings expand to
multi-token id sequences, which exercises the forcing queue the same way a
subword tokenizer would.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import requests

from .errors import OutOfVocabularyError, SchemaError, TransportError, VocabSizeMismatchError

log = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-9


@runtime_checkable
class Tokenizer(Protocol):
    def encode(self, text: str) -> list[int]: ...

    def decode(self, ids: Sequence[int]) -> str: ...


@runtime_checkable
class LanguageModelBackend(Protocol):
    """next_logits must return exactly vocab_size finite-or-neg-inf scores."""

    @property
    def vocab_size(self) -> int: ...

    @property
    def eos_token(self) -> int: ...

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray: ...


class CharTokenizer:
    """One token id per character; decode(encode(s)) == s for any covered s."""

    def __init__(self, vocab: Sequence[str]) -> None:
        vocab = list(vocab)
        if not vocab:
            raise ValueError("vocab must be non-empty")
        for sym in vocab:
            if len(sym) != 1:
                raise ValueError(f"vocab entries must be single characters, got {sym!r}")
        if len(set(vocab)) != len(vocab):
            raise ValueError("vocab entries must be unique")
        self._vocab = vocab
        self._ids = {sym: i for i, sym in enumerate(vocab)}

    @property
    def vocab_size(self) -> int:
        return len(self._vocab)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._ids[ch] for ch in text]
        except KeyError as exc:
            raise OutOfVocabularyError(f"character {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        chars = []
        for i in ids:
            if not 0 <= i < len(self._vocab):
                raise OutOfVocabularyError(f"token id {i} outside vocabulary of size {len(self._vocab)}")
            chars.append(self._vocab[i])
        return "".join(chars)


MAX_TOY_VOCAB = 64


class ToyTableLM:
    """Deterministic LM defined by a suffix-keyed transition table.

    The row whose key is the longest suffix of the decoded context wins;
    an empty context uses start_row and unmatched contexts fall back to
    default_row. Identical prefixes always give bitwise-identical logits.
    """

    supports_concurrent_calls = True

    def __init__(
        self,
        tokenizer: CharTokenizer,
        eos: str,
        start_row: Sequence[float],
        rows: dict[str, Sequence[float]],
        default_row: Sequence[float],
    ) -> None:
        self.tokenizer = tokenizer
        if tokenizer.vocab_size > MAX_TOY_VOCAB:
            raise ValueError(
                f"toy vocabulary has {tokenizer.vocab_size} symbols, cap is {MAX_TOY_VOCAB}"
            )
        if eos not in tokenizer._ids:
            raise ValueError(f"eos symbol {eos!r} not in vocabulary")
        self._eos = tokenizer._ids[eos]
        self.start_row = self._check_row("start_row", start_row)
        self.rows = {key: self._check_row(f"rows[{key!r}]", row) for key, row in rows.items()}
        self.default_row = self._check_row("default_row", default_row)
        # Longest key first so suffix matching is longest-match.
        self._keys_by_length = sorted(self.rows, key=len, reverse=True)
        with np.errstate(divide="ignore"):
            self._log_rows = {key: np.log(row) for key, row in self.rows.items()}
            self._log_start = np.log(self.start_row)
            self._log_default = np.log(self.default_row)

    def _check_row(self, name: str, row: Sequence[float]) -> np.ndarray:
        arr = np.asarray(row, dtype=np.float64)
        if arr.shape != (self.tokenizer.vocab_size,):
            raise ValueError(f"{name} has length {arr.size}, expected {self.tokenizer.vocab_size}")
        if (arr < 0).any() or abs(arr.sum() - 1.0) > ROW_SUM_TOLERANCE:
            raise ValueError(f"{name} is not a probability simplex (sum {arr.sum()!r})")
        return arr

    @property
    def vocab_size(self) -> int:
        return self.tokenizer.vocab_size

    @property
    def eos_token(self) -> int:
        return self._eos

    def row_for(self, prefix: Sequence[int]) -> np.ndarray:
        key = self._match(prefix)
        if key is not None:
            return self.rows[key]
        return self.start_row if len(prefix) == 0 else self.default_row

    def _log_row_for(self, prefix: Sequence[int]) -> np.ndarray:
        key = self._match(prefix)
        if key is not None:
            return self._log_rows[key]
        return self._log_start if len(prefix) == 0 else self._log_default

    def _match(self, prefix: Sequence[int]) -> str | None:
        if len(prefix) == 0:
            return None
        context = self.tokenizer.decode(prefix)
        for key in self._keys_by_length:
            if context.endswith(key):
                return key
        return None

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray:
        return toy_next_logits(self, prefix)

    @classmethod
    def from_dict(cls, data: dict) -> "ToyTableLM":
        missing = {"vocab", "eos", "start_row", "rows", "default_row"} - set(data)
        if missing:
            raise ValueError(f"toy table definition missing fields: {sorted(missing)}")
        return cls(
            CharTokenizer(data["vocab"]),
            data["eos"],
            data["start_row"],
            data["rows"],
            data["default_row"],
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ToyTableLM":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def toy_next_logits(lm: ToyTableLM, prefix: Sequence[int]) -> np.ndarray:
    """Log-probabilities of the matched table row; zero mass becomes -inf."""
    if len(prefix) and not (0 <= min(prefix) and max(prefix) < lm.vocab_size):
        bad = [i for i in prefix if not 0 <= i < lm.vocab_size]
        raise OutOfVocabularyError(
            f"token id {bad[0]} outside vocabulary of size {lm.vocab_size}"
        )
    return lm._log_row_for(prefix).copy()


@dataclass(frozen=True)
class HttpBackendConfig:
    """Connection settings for a logits-serving endpoint."""

    base_url: str
    timeout_seconds: float = 10.0
    max_retries: int = 3
    retry_backoff_seconds: float = 0.05


class HttpBackend:
    """Adapter for servers speaking POST {"prefix": [...]} ->
    {"logits": [...], "vocab_size": int, "eos_token": int}.

    Safe for concurrent calls: every request is independent. vocab_size and
    eos_token are pinned by the first response; later disagreement is a
    schema error.
    """

    supports_concurrent_calls = True

    def __init__(self, config: HttpBackendConfig) -> None:
        self.config = config
        self._vocab_size: int | None = None
        self._eos_token: int | None = None

    @property
    def vocab_size(self) -> int:
        if self._vocab_size is None:
            self.probe()
        return self._vocab_size

    @property
    def eos_token(self) -> int:
        if self._eos_token is None:
            self.probe()
        return self._eos_token

    def probe(self) -> None:
        """Learn vocab_size/eos_token from an empty-prefix request."""
        self.next_logits([])

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray:
        payload = {"prefix": [int(i) for i in prefix]}
        attempts = self.config.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt > 0:
                log.warning(
                    "retrying logits request (attempt %d of %d): %s",
                    attempt + 1,
                    attempts,
                    last_error,
                )
                time.sleep(self.config.retry_backoff_seconds)
            try:
                response = requests.post(
                    self.config.base_url,
                    json=payload,
                    timeout=self.config.timeout_seconds,
                )
                response.raise_for_status()
            except requests.RequestException as exc:
                last_error = exc
                continue
            return self._parse(response)
        raise TransportError(
            f"logits request failed after {attempts} attempts: {last_error}"
        ) from last_error

    def _parse(self, response: requests.Response) -> np.ndarray:
        try:
            body = response.json()
        except ValueError as exc:
            raise SchemaError(f"response is not JSON: {exc}") from exc
        for key in ("logits", "vocab_size", "eos_token"):
            if key not in body:
                raise SchemaError(f"response missing field {key!r}")
        vocab_size = int(body["vocab_size"])
        eos_token = int(body["eos_token"])
        if not 0 <= eos_token < vocab_size:
            raise SchemaError(f"eos_token {eos_token} outside vocabulary of size {vocab_size}")
        if self._vocab_size is None:
            self._vocab_size = vocab_size
            self._eos_token = eos_token
        elif vocab_size != self._vocab_size:
            raise VocabSizeMismatchError(
                f"server advertised vocab_size {vocab_size}, previously {self._vocab_size}"
            )
        logits = np.asarray(body["logits"], dtype=np.float64)
        if logits.shape != (vocab_size,):
            raise SchemaError(
                f"logits length {logits.size} does not match vocab_size {vocab_size}"
            )
        if np.isnan(logits).any() or np.isposinf(logits).any():
            raise SchemaError("logits must be finite or -inf")
        return logits
