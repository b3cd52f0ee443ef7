"""Token sampling: temperature scaling, top-k / top-p filtering, seeded draws.

Filter order is fixed as temperature -> top-k -> softmax -> top-p ->
renormalize -> draw. At the default settings (temperature 1.0, top_k 50,
top_p 1.0) every filter is the identity on small vocabularies, so the
resulting distribution is the plain softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDistributionError

DEFAULT_TEMPERATURE = 1.0
DEFAULT_TOP_K = 50
DEFAULT_TOP_P = 1.0
DEFAULT_MAX_NEW_TOKENS = 8192

SIMPLEX_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SamplingParams:
    """Decoding hyperparameters plus the RNG seed that makes runs replayable."""

    temperature: float = DEFAULT_TEMPERATURE
    top_k: int = DEFAULT_TOP_K
    top_p: float = DEFAULT_TOP_P
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    seed: int = 0
    greedy: bool = False

    def __post_init__(self) -> None:
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError(f"temperature must be finite and > 0, got {self.temperature}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the single RNG algorithm used everywhere."""
    return np.random.default_rng(seed)


def apply_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Divide every score by the temperature."""
    if not (np.isfinite(temperature) and temperature > 0):
        raise ValueError(f"temperature must be finite and > 0, got {temperature}")
    with np.errstate(over="ignore"):
        # Near-max scores may saturate to +/-inf at small temperatures; the
        # softmax treats +inf as a certain winner, which is the intent.
        return np.asarray(logits, dtype=np.float64) / temperature


def top_k_filter(logits: np.ndarray, k: int) -> np.ndarray:
    """Keep the k highest scores, setting the rest to -inf.

    Ties at the cut are broken by token id: the lower id survives. k at or
    above the vocabulary size is the identity.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = np.asarray(logits, dtype=np.float64)
    if k >= scores.size:
        return scores.copy()
    # Stable sort on negated scores: equal scores keep ascending-id order.
    order = np.argsort(-scores, kind="stable")
    out = np.full_like(scores, -np.inf)
    keep = order[:k]
    out[keep] = scores[keep]
    return out


def top_p_filter(probs: np.ndarray, p: float) -> np.ndarray:
    """Nucleus filter over a probability simplex.

    Keeps the smallest descending-probability prefix whose cumulative mass
    reaches p and renormalizes it; p = 1.0 is the identity.
    """
    if not (0.0 < p <= 1.0):
        raise ValueError(f"top_p must be in (0, 1], got {p}")
    probs = np.asarray(probs, dtype=np.float64)
    total = probs.sum()
    if abs(total - 1.0) > SIMPLEX_TOLERANCE:
        raise ValueError(f"probabilities must sum to 1 within {SIMPLEX_TOLERANCE}, got {total!r}")
    if p == 1.0:
        return probs.copy()
    order = np.argsort(-probs, kind="stable")
    cumulative = np.cumsum(probs[order])
    # First position where the cumulative mass reaches p; keep everything
    # up to and including it (small slack guards float round-off).
    reached = np.nonzero(cumulative >= p - 1e-12)[0]
    cut = int(reached[0]) if reached.size else probs.size - 1
    keep = order[: cut + 1]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def _softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax that treats +inf scores as certain winners."""
    positive_inf = np.isposinf(logits)
    if positive_inf.any():
        out = np.zeros_like(logits)
        out[positive_inf] = 1.0 / positive_inf.sum()
        return out
    shifted = logits - logits.max()
    weights = np.exp(shifted)
    return weights / weights.sum()


def distribution(logits: np.ndarray, params: SamplingParams) -> np.ndarray:
    """Exact token distribution the sampler draws from."""
    scores = np.asarray(logits, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("logits must be non-empty")
    if not (scores > -np.inf).any():
        raise DegenerateDistributionError("all scores are -inf")
    scores = apply_temperature(scores, params.temperature)
    scores = top_k_filter(scores, params.top_k)
    probs = _softmax(scores)
    if params.top_p < 1.0:
        probs = top_p_filter(probs, params.top_p)
    return probs


def sample(logits: np.ndarray, params: SamplingParams, rng: np.random.Generator) -> int:
    """Draw one token id from the filtered distribution.

    Deterministic given (seed, logits, params): the draw is an inverse-CDF
    lookup on a single uniform variate from the passed generator.
    """
    probs = distribution(logits, params)
    if params.greedy:
        return int(np.argmax(probs))
    cumulative = np.cumsum(probs)
    r = rng.random()
    idx = int(np.searchsorted(cumulative, r, side="right"))
    if idx >= probs.size or probs[idx] == 0.0:
        # Float round-off at the tail: fall back to the last supported token.
        idx = int(np.nonzero(probs)[0][-1])
    return idx
