"""Shared fixtures: toy vocabularies, transition tables, and mock servers."""

from __future__ import annotations

import json
import random
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from tdec.backend import CharTokenizer, ToyTableLM

# Covers the default markers, the ablation variants, prompts, digits, and
# an EOS symbol. Characters appear once each.
BASE_CHARS = (
    "<>/$ \nQA:?+.,!'\"abcdefghijklmnopqrstuvwxyz0123456789"
    "BCDEFGHⅠⅡ①②"
)

EOS_CHAR = "$"


def make_vocab(extra: str = "") -> list[str]:
    seen: dict[str, None] = {}
    for ch in BASE_CHARS + extra:
        seen.setdefault(ch)
    return list(seen)


def uniform_over(chars: str, vocab: list[str]) -> list[float]:
    row = [0.0] * len(vocab)
    share = 1.0 / len(chars)
    for ch in chars:
        row[vocab.index(ch)] += share
    return row


def one_hot(char: str, vocab: list[str]) -> list[float]:
    return uniform_over(char, vocab)


def build_table(
    rows: dict[str, str],
    *,
    vocab: list[str] | None = None,
    start: str | None = None,
    default: str = "z",
) -> ToyTableLM:
    """Table from suffix -> next-chars maps; values are uniform over chars."""
    vocab = vocab or make_vocab()
    return ToyTableLM(
        CharTokenizer(vocab),
        EOS_CHAR,
        uniform_over(start, vocab) if start else uniform_over(default, vocab),
        {key: uniform_over(chars, vocab) for key, chars in rows.items()},
        uniform_over(default, vocab),
    )


@pytest.fixture
def vocab() -> list[str]:
    return make_vocab()


@pytest.fixture
def tokenizer(vocab) -> CharTokenizer:
    return CharTokenizer(vocab)


def qa_table(vocab: list[str] | None = None) -> ToyTableLM:
    """Three-question table correct under both template and base decoding.

    Questions end in 1/2/3; the template path produces rationales u/v/w and
    answers A/B/C; the base path answers A/B/C directly then stops.
    """
    rows = {
        "1<reasoning>": "u",
        "2<reasoning>": "v",
        "3<reasoning>": "w",
        "u": EOS_CHAR,
        "v": EOS_CHAR,
        "w": EOS_CHAR,
        "u</reasoning><answer>": "A",
        "v</reasoning><answer>": "B",
        "w</reasoning><answer>": "C",
        "A": EOS_CHAR,
        "B": EOS_CHAR,
        "C": EOS_CHAR,
        "1": "A",
        "2": "B",
        "3": "C",
    }
    return build_table(rows, vocab=vocab)


def random_table(rng: random.Random, *, eos_prob: float = 0.2, letters: str = "abcde") -> ToyTableLM:
    """Randomized table for property runs; every row keeps some EOS mass."""
    vocab = make_vocab()

    def random_row() -> list[float]:
        weights = {ch: rng.random() for ch in letters}
        weights[EOS_CHAR] = (eos_prob / (1 - eos_prob)) * sum(weights.values())
        total = sum(weights.values())
        row = [0.0] * len(vocab)
        for ch, w in weights.items():
            row[vocab.index(ch)] = w / total
        return row

    keys = {rng.choice(letters) for _ in range(rng.randint(1, 4))}
    return ToyTableLM(
        CharTokenizer(vocab),
        EOS_CHAR,
        random_row(),
        {key: random_row() for key in keys},
        random_row(),
    )


# Headers of the most recent mock-server request (for auth assertions).
LAST_REQUEST_HEADERS: dict[str, str] = {}


class _JsonHandler(BaseHTTPRequestHandler):
    """POST-only JSON handler; behavior injected via class attribute."""

    respond = None  # set per server: fn(path, payload) -> (status, dict)

    def do_POST(self):  # noqa: N802 (http.server API)
        LAST_REQUEST_HEADERS.clear()
        LAST_REQUEST_HEADERS.update(dict(self.headers))
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length) or b"{}")
        status, body = type(self).respond(self.path, payload)
        # A str body is sent raw (lets tests exercise non-JSON responses).
        encoded = body.encode("utf-8") if isinstance(body, str) else json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(encoded)))
        self.end_headers()
        self.wfile.write(encoded)

    def log_message(self, *args):  # keep test output quiet
        pass


@contextmanager
def http_server(respond):
    """Serve `respond(path, payload) -> (status, body_dict)` on a free port."""
    handler = type("Handler", (_JsonHandler,), {"respond": staticmethod(respond)})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}"
    finally:
        server.shutdown()
        thread.join()
