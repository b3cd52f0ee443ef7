"""Template-variant matrix: swap the marker pair, rerun the same pipeline,
and tabulate per-benchmark accuracy.

The registry holds exactly the nine marker pairs under study, grouped into
the original template, semantically similar names, arbitrary placeholders,
and random tokens. Close markers always follow the "</name>" convention,
and the non-ASCII names are kept verbatim so multi-byte markers get
exercised.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backend import LanguageModelBackend, Tokenizer
from .errors import EmptyBenchmarkError
from .eval_harness import EvalItem, exact_match, extract_candidate, format_float
from .generator import METHOD_TORSO, PromptAssembly, generate
from .sampling import SamplingParams
from .template_fsm import DEFAULT_MIN_ANSWER_TOKENS, TemplateSpec

CATEGORY_TORSO = "torso"
CATEGORY_SEMANTICALLY_SIMILAR = "semantically_similar"
CATEGORY_ARBITRARY_PLACEHOLDER = "arbitrary_placeholder"
CATEGORY_RANDOM_TOKENS = "random_tokens"


@dataclass(frozen=True)
class TemplateVariant:
    """One open/answer marker-name pair with its category."""

    category: str
    open_name: str
    answer_name: str

    @property
    def reasoning_open(self) -> str:
        return f"<{self.open_name}>"

    @property
    def reasoning_close(self) -> str:
        return f"</{self.open_name}>"

    @property
    def answer_open(self) -> str:
        return f"<{self.answer_name}>"

    @property
    def answer_close(self) -> str:
        return f"</{self.answer_name}>"

    def to_template_spec(self, tokenizer: Tokenizer) -> TemplateSpec:
        return TemplateSpec.from_strings(
            tokenizer,
            reasoning_open=self.reasoning_open,
            reasoning_close=self.reasoning_close,
            answer_open=self.answer_open,
            answer_close=self.answer_close,
        )


REGISTRY: tuple[TemplateVariant, ...] = (
    TemplateVariant(CATEGORY_TORSO, "reasoning", "answer"),
    TemplateVariant(CATEGORY_SEMANTICALLY_SIMILAR, "think", "answer"),
    TemplateVariant(CATEGORY_SEMANTICALLY_SIMILAR, "solution", "answer"),
    TemplateVariant(CATEGORY_SEMANTICALLY_SIMILAR, "reasoning", "result"),
    TemplateVariant(CATEGORY_SEMANTICALLY_SIMILAR, "reasoning", "conclusion"),
    TemplateVariant(CATEGORY_ARBITRARY_PLACEHOLDER, "partⅠ", "partⅡ"),
    TemplateVariant(CATEGORY_ARBITRARY_PLACEHOLDER, "marker①", "marker②"),
    TemplateVariant(CATEGORY_RANDOM_TOKENS, "xyz", "abc"),
    TemplateVariant(CATEGORY_RANDOM_TOKENS, "qwer", "asdf"),
)


def variants_by_name(names: Sequence[str]) -> list[TemplateVariant]:
    """Look up registry variants as "open+answer" name pairs."""
    index = {f"{v.open_name}+{v.answer_name}": v for v in REGISTRY}
    missing = [name for name in names if name not in index]
    if missing:
        raise ValueError(f"unknown template variants: {missing}; known: {sorted(index)}")
    return [index[name] for name in names]


@dataclass(frozen=True)
class AblationRow:
    category: str
    open_marker: str
    answer_marker: str
    benchmark: str
    accuracy: float


def run_ablation(
    variants: Sequence[TemplateVariant],
    benchmarks: dict[str, list[EvalItem]],
    backend: LanguageModelBackend,
    tokenizer: Tokenizer,
    params: SamplingParams,
    *,
    system_prefix: str = "",
    min_answer_tokens: int = DEFAULT_MIN_ANSWER_TOKENS,
    literal_close: bool = True,
) -> list[AblationRow]:
    """One template run per (variant, benchmark); one seed across variants."""
    rows = []
    for variant in variants:
        spec = variant.to_template_spec(tokenizer)
        for benchmark_name in sorted(benchmarks):
            items = benchmarks[benchmark_name]
            if not items:
                raise EmptyBenchmarkError(f"benchmark {benchmark_name!r} has no items")
            correct = 0
            for item in items:
                pa = PromptAssembly(
                    user_query=item.question,
                    method=METHOD_TORSO,
                    system_prefix=system_prefix,
                )
                record = generate(
                    backend,
                    tokenizer,
                    spec,
                    params,
                    pa,
                    item_id=item.id,
                    min_answer_tokens=min_answer_tokens,
                    literal_close=literal_close,
                )
                correct += exact_match(extract_candidate(record, item), item)
            rows.append(
                AblationRow(
                    category=variant.category,
                    open_marker=variant.reasoning_open,
                    answer_marker=variant.answer_open,
                    benchmark=benchmark_name,
                    accuracy=correct / len(items),
                )
            )
    return rows


def ablation_csv(rows: Sequence[AblationRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["category", "open_marker", "answer_marker", "benchmark", "accuracy"])
        for row in rows:
            writer.writerow(
                [row.category, row.open_marker, row.answer_marker, row.benchmark, format_float(row.accuracy)]
            )
