"""Sampling filters checked against independent pure-Python references."""

from __future__ import annotations

import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest

from tdec.errors import DegenerateDistributionError
from tdec.sampling import (
    SamplingParams,
    apply_temperature,
    distribution,
    make_rng,
    sample,
    top_k_filter,
    top_p_filter,
)

GOLDEN = Path(__file__).parent / "golden"


# --- independent references (no tdec imports beyond the functions under test) ---

def ref_softmax(scores):
    finite = [s for s in scores if s > float("-inf")]
    m = max(finite)
    weights = [math.exp(s - m) if s > float("-inf") else 0.0 for s in scores]
    total = sum(weights)
    return [w / total for w in weights]


def ref_top_k_survivors(scores, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return set(order[: min(k, len(scores))])


def ref_pipeline(scores, temperature, k, p):
    """softmax -> top-k -> top-p -> renormalize, on plain Python floats."""
    probs = ref_softmax([s / temperature for s in scores])
    survivors = ref_top_k_survivors(scores, k)
    probs = [q if i in survivors else 0.0 for i, q in enumerate(probs)]
    total = sum(probs)
    probs = [q / total for q in probs]
    if p < 1.0:
        order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
        kept, mass = set(), 0.0
        for i in order:
            kept.add(i)
            mass += probs[i]
            if mass >= p - 1e-12:
                break
        probs = [q if i in kept else 0.0 for i, q in enumerate(probs)]
        total = sum(probs)
        probs = [q / total for q in probs]
    return probs


# --- temperature ---

def test_temperature_one_is_identity():
    logits = np.array([0.3, -2.0, 5.5])
    assert np.array_equal(apply_temperature(logits, 1.0), logits)


def test_temperature_half_doubles():
    assert np.allclose(apply_temperature(np.array([0.0, 1.0]), 0.5), [0.0, 2.0])


def test_temperature_two_matches_high_precision_softmax():
    import mpmath

    mpmath.mp.dps = 50
    rng = make_rng(7)
    logits = rng.normal(size=8) * 3
    ours = ref_softmax(list(apply_temperature(logits, 2.0)))
    halved = [mpmath.mpf(float(s)) / 2 for s in logits]
    weights = [mpmath.e**s for s in halved]
    total = sum(weights)
    expected = [w / total for w in weights]
    for a, b in zip(ours, expected):
        assert abs(a - float(b)) < 1e-12


@pytest.mark.parametrize("bad", [0.0, -1.0, float("inf"), float("nan")])
def test_temperature_domain_errors(bad):
    with pytest.raises(ValueError):
        apply_temperature(np.zeros(3), bad)


# --- top-k ---

def test_top_k_identity_when_k_covers_vocab():
    logits = np.arange(10.0)
    assert np.array_equal(top_k_filter(logits, 50), logits)


def test_top_k_argmax_case():
    out = top_k_filter(np.array([3.0, 9.0, 2.0]), 1)
    assert np.isfinite(out[1])
    assert np.isneginf(out[[0, 2]]).all()


def test_top_k_tie_rule_keeps_lower_ids():
    out = top_k_filter(np.array([5.0, 5.0, 5.0, 1.0]), 2)
    assert np.isfinite(out[[0, 1]]).all()
    assert np.isneginf(out[[2, 3]]).all()


def test_top_k_tie_rule_over_permutations():
    base = [5.0, 5.0, 3.0, 3.0, 1.0]
    for perm in set(itertools.permutations(base)):
        for k in (1, 2, 3, 4):
            out = top_k_filter(np.array(perm), k)
            assert set(np.nonzero(np.isfinite(out))[0]) == ref_top_k_survivors(list(perm), k)


def test_top_k_rejects_nonpositive_k():
    with pytest.raises(ValueError):
        top_k_filter(np.zeros(3), 0)


# --- top-p ---

def test_top_p_one_is_identity():
    probs = np.array([0.4, 0.3, 0.2, 0.1])
    assert np.array_equal(top_p_filter(probs, 1.0), probs)


def test_top_p_half_keeps_two_and_renormalizes():
    out = top_p_filter(np.array([0.4, 0.3, 0.2, 0.1]), 0.5)
    assert np.allclose(out, [4 / 7, 3 / 7, 0.0, 0.0])


def test_top_p_boundary_keeps_only_heaviest():
    out = top_p_filter(np.array([0.4, 0.6]), 0.4)
    assert np.allclose(out, [0.0, 1.0])


@pytest.mark.parametrize("bad", [0.0, -0.5, 1.5])
def test_top_p_domain_errors(bad):
    with pytest.raises(ValueError):
        top_p_filter(np.array([0.5, 0.5]), bad)


def test_top_p_rejects_non_simplex():
    with pytest.raises(ValueError):
        top_p_filter(np.array([0.5, 0.6]), 0.9)


# --- composed distribution vs reference ---

def test_distribution_matches_reference_on_grids():
    rng = make_rng(123)
    for vocab_size in (2, 5, 17, 64):
        logits = rng.normal(size=vocab_size) * 2.5
        for temperature in (0.1, 1.0, 2.0):
            for k in (1, 5, 50):
                for p in (0.1, 1.0):
                    params = SamplingParams(temperature=temperature, top_k=k, top_p=p, seed=0)
                    ours = distribution(logits, params)
                    expected = ref_pipeline(list(logits), temperature, k, p)
                    assert np.max(np.abs(ours - np.array(expected))) < 1e-9


def test_distribution_equals_plain_softmax_at_defaults():
    # Paper-default temperature and top_p with top_k covering the vocabulary.
    rng = make_rng(5)
    for vocab_size in (3, 16, 64):
        logits = rng.normal(size=vocab_size)
        params = SamplingParams(top_k=max(50, vocab_size))
        ours = distribution(logits, params)
        assert np.max(np.abs(ours - np.array(ref_softmax(list(logits))))) < 1e-9


# --- draws ---

def test_empirical_frequencies_follow_distribution():
    target = [0.7, 0.2, 0.1]
    logits = np.log(target)
    params = SamplingParams(seed=31)
    rng = make_rng(31)
    counts = [0, 0, 0]
    draws = 100_000
    for _ in range(draws):
        counts[sample(logits, params, rng)] += 1
    for count, expected in zip(counts, target):
        assert abs(count / draws - expected) <= 0.01


def test_sampling_is_deterministic_for_fixed_seed():
    logits = make_rng(2).normal(size=8)
    params = SamplingParams(seed=99)
    rng_a, rng_b = make_rng(99), make_rng(99)
    seq_a = [sample(logits, params, rng_a) for _ in range(20)]
    seq_b = [sample(logits, params, rng_b) for _ in range(20)]
    assert seq_a == seq_b


def test_golden_draw_sequence():
    golden = json.loads((GOLDEN / "sample_sequence.json").read_text())
    logits = np.array(golden["logits"])
    params = SamplingParams(seed=golden["seed"])
    rng = make_rng(golden["seed"])
    drawn = [sample(logits, params, rng) for _ in range(len(golden["sequence"]))]
    assert drawn == golden["sequence"]


def test_greedy_flag_returns_argmax():
    logits = np.array([0.1, 3.0, 2.9])
    params = SamplingParams(greedy=True, seed=4)
    assert all(sample(logits, params, make_rng(s)) == 1 for s in range(10))


def test_degenerate_distribution_raises():
    with pytest.raises(DegenerateDistributionError):
        sample(np.full(4, -np.inf), SamplingParams(), make_rng(0))


def test_empty_vector_rejected():
    with pytest.raises(ValueError):
        sample(np.array([]), SamplingParams(), make_rng(0))


def test_params_invariants():
    with pytest.raises(ValueError):
        SamplingParams(temperature=0.0)
    with pytest.raises(ValueError):
        SamplingParams(top_k=0)
    with pytest.raises(ValueError):
        SamplingParams(top_p=0.0)
    with pytest.raises(ValueError):
        SamplingParams(max_new_tokens=0)
