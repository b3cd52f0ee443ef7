"""Command-line entry point: generate, eval, judge, ablate, report.

One JSON config file drives a run; a handful of flags override the common
knobs (method, seed, output dir, concurrency). Secrets (the judge auth
token) come from the environment only. Every subcommand is deterministic
given identical inputs and seed, and none mutates its inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .ablation import REGISTRY, ablation_csv, run_ablation, variants_by_name
from .backend import CharTokenizer, HttpBackend, HttpBackendConfig, ToyTableLM
from .errors import (
    BackendError,
    ConfigError,
    EmptyBenchmarkError,
    InsufficientEligibleItemsError,
    TdecError,
)
from .eval_harness import aggregate, load_items, report_to_csv, score_records
from .generator import (
    METHOD_COT,
    METHOD_COT_ZERO,
    METHOD_LTM,
    METHOD_TORSO,
    METHOD_TOT,
    METHODS,
    PromptAssembly,
    ZERO_SHOT_COT_SUFFIX,
    generate,
    read_records,
    write_records,
)
from .judge_harness import (
    DEFAULT_REPETITIONS,
    DEFAULT_SAMPLES,
    HttpJudgeClient,
    JudgeEndpointConfig,
    run_pairwise,
    tally_to_csv,
)
from .metrics import length_csv, length_report, plot_lengths
from .sampling import SamplingParams
from .template_fsm import DEFAULT_MIN_ANSWER_TOKENS, TemplateSpec

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4

SHOT_METHODS = (METHOD_COT, METHOD_TOT, METHOD_LTM)

DEFAULT_TEMPLATE = {
    "reasoning_open": "<reasoning>",
    "reasoning_close": "</reasoning>",
    "answer_open": "<answer>",
    "answer_close": "</answer>",
}


@dataclass
class JudgeSection:
    base_url: str
    model: str
    torso_records: Path
    baseline_records: Path
    token_env: str = "TDEC_JUDGE_TOKEN"
    samples: int = DEFAULT_SAMPLES
    repetitions: int = DEFAULT_REPETITIONS
    seed: int = 0
    timeout_seconds: float = 30.0
    max_retries: int = 3


@dataclass
class RunConfig:
    backend_type: str
    method: str
    dataset: Path
    toy_table: Path | None = None
    http_base_url: str | None = None
    http_timeout_seconds: float = 10.0
    http_max_retries: int = 3
    http_vocab: list[str] | None = None
    template: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_TEMPLATE))
    sampling: SamplingParams = field(default_factory=SamplingParams)
    shots: Path | None = None
    system_prefix: str = ""
    min_answer_tokens: int = DEFAULT_MIN_ANSWER_TOKENS
    literal_close: bool = True
    output_dir: Path = Path("out")
    concurrency: int = 1
    model_label: str = "model"
    judge: JudgeSection | None = None
    ablation_variants: list[str] | None = None
    ablation_benchmarks: dict[str, Path] = field(default_factory=dict)


def _reject_unknown(data: dict, allowed: set[str], context: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")


def _existing(path_str: str, context: str) -> Path:
    path = Path(path_str)
    if not path.exists():
        raise ConfigError(f"{context} path does not exist: {path}")
    return path


def load_config(path: str | Path, overrides: argparse.Namespace | None = None) -> RunConfig:
    """Parse and validate the run config; unknown keys are rejected."""
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file does not exist: {config_path}")
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(
        raw,
        {
            "backend",
            "template",
            "sampling",
            "method",
            "dataset",
            "shots",
            "system_prefix",
            "min_answer_tokens",
            "literal_close",
            "output_dir",
            "concurrency",
            "model_label",
            "judge",
            "ablation",
        },
        "config",
    )

    backend_raw = raw.get("backend")
    if not isinstance(backend_raw, dict) or "type" not in backend_raw:
        raise ConfigError("config needs a backend object with a 'type'")
    backend_type = backend_raw["type"]
    toy_table = None
    http_base_url = None
    http_timeout = 10.0
    http_retries = 3
    http_vocab = None
    if backend_type == "toy":
        _reject_unknown(backend_raw, {"type", "table"}, "backend")
        if "table" not in backend_raw:
            raise ConfigError("toy backend needs a 'table' path")
        toy_table = _existing(backend_raw["table"], "toy table")
    elif backend_type == "http":
        _reject_unknown(
            backend_raw, {"type", "base_url", "timeout_seconds", "max_retries", "vocab"}, "backend"
        )
        if "base_url" not in backend_raw or "vocab" not in backend_raw:
            raise ConfigError("http backend needs 'base_url' and a 'vocab' character list")
        http_base_url = backend_raw["base_url"]
        http_timeout = float(backend_raw.get("timeout_seconds", 10.0))
        http_retries = int(backend_raw.get("max_retries", 3))
        http_vocab = list(backend_raw["vocab"])
    else:
        raise ConfigError(f"unknown backend type {backend_type!r}")

    template = dict(DEFAULT_TEMPLATE)
    template_raw = raw.get("template", {})
    _reject_unknown(template_raw, set(DEFAULT_TEMPLATE), "template")
    template.update(template_raw)

    sampling_raw = dict(raw.get("sampling", {}))
    _reject_unknown(
        sampling_raw,
        {"temperature", "top_k", "top_p", "max_new_tokens", "seed", "greedy"},
        "sampling",
    )
    try:
        sampling = SamplingParams(**sampling_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sampling params: {exc}") from exc

    method = raw.get("method", METHOD_TORSO)
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {list(METHODS)}")
    if "dataset" not in raw:
        raise ConfigError("config needs a 'dataset' path")
    dataset = _existing(raw["dataset"], "dataset")
    shots = _existing(raw["shots"], "shots") if raw.get("shots") else None

    judge = None
    if "judge" in raw:
        judge_raw = dict(raw["judge"])
        _reject_unknown(
            judge_raw,
            {
                "base_url",
                "model",
                "token_env",
                "samples",
                "repetitions",
                "seed",
                "torso_records",
                "baseline_records",
                "timeout_seconds",
                "max_retries",
            },
            "judge",
        )
        for key in ("base_url", "model", "torso_records", "baseline_records"):
            if key not in judge_raw:
                raise ConfigError(f"judge section needs {key!r}")
        judge_raw["torso_records"] = _existing(judge_raw["torso_records"], "judge torso_records")
        judge_raw["baseline_records"] = _existing(
            judge_raw["baseline_records"], "judge baseline_records"
        )
        judge = JudgeSection(**judge_raw)

    ablation_variants = None
    ablation_benchmarks: dict[str, Path] = {}
    if "ablation" in raw:
        ablation_raw = dict(raw["ablation"])
        _reject_unknown(ablation_raw, {"variants", "benchmarks"}, "ablation")
        variants = ablation_raw.get("variants", "all")
        ablation_variants = None if variants == "all" else list(variants)
        for name, bench_path in ablation_raw.get("benchmarks", {}).items():
            ablation_benchmarks[name] = _existing(bench_path, f"ablation benchmark {name!r}")

    config = RunConfig(
        backend_type=backend_type,
        method=method,
        dataset=dataset,
        toy_table=toy_table,
        http_base_url=http_base_url,
        http_timeout_seconds=http_timeout,
        http_max_retries=http_retries,
        http_vocab=http_vocab,
        template=template,
        sampling=sampling,
        shots=shots,
        system_prefix=raw.get("system_prefix", ""),
        min_answer_tokens=int(raw.get("min_answer_tokens", DEFAULT_MIN_ANSWER_TOKENS)),
        literal_close=bool(raw.get("literal_close", True)),
        output_dir=Path(raw.get("output_dir", "out")),
        concurrency=int(raw.get("concurrency", 1)),
        model_label=raw.get("model_label", "model"),
        judge=judge,
        ablation_variants=ablation_variants,
        ablation_benchmarks=ablation_benchmarks,
    )

    if overrides is not None:
        if getattr(overrides, "method", None):
            if overrides.method not in METHODS:
                raise ConfigError(f"unknown method {overrides.method!r}")
            config.method = overrides.method
        if getattr(overrides, "seed", None) is not None:
            config.sampling = SamplingParams(
                temperature=config.sampling.temperature,
                top_k=config.sampling.top_k,
                top_p=config.sampling.top_p,
                max_new_tokens=config.sampling.max_new_tokens,
                seed=overrides.seed,
                greedy=config.sampling.greedy,
            )
        if getattr(overrides, "out", None):
            config.output_dir = Path(overrides.out)
        if getattr(overrides, "concurrency", None) is not None:
            config.concurrency = overrides.concurrency
    return config


def build_backend(config: RunConfig):
    """Returns (backend, tokenizer) per the config's backend section."""
    if config.backend_type == "toy":
        lm = ToyTableLM.from_json_file(config.toy_table)
        return lm, lm.tokenizer
    http = HttpBackend(
        HttpBackendConfig(
            base_url=config.http_base_url,
            timeout_seconds=config.http_timeout_seconds,
            max_retries=config.http_max_retries,
        )
    )
    return http, CharTokenizer(config.http_vocab)


def load_shots(path: Path) -> list[tuple[str, str, str]]:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        return [(shot["question"], shot["rationale"], shot["answer"]) for shot in raw]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad shots file {path}: {exc}") from exc


def cmd_generate(config: RunConfig) -> int:
    backend, tokenizer = build_backend(config)
    items = load_items(config.dataset)
    shots: list[tuple[str, str, str]] = []
    if config.method in SHOT_METHODS:
        if config.shots is None:
            raise ConfigError(f"method {config.method!r} needs a shots file")
        shots = load_shots(config.shots)
    suffix = ZERO_SHOT_COT_SUFFIX if config.method == METHOD_COT_ZERO else ""
    spec = (
        TemplateSpec.from_strings(tokenizer, **config.template)
        if config.method == METHOD_TORSO
        else None
    )

    def run_item(item):
        pa = PromptAssembly(
            user_query=item.question,
            method=config.method,
            system_prefix=config.system_prefix,
            shots=list(shots),
            suffix=suffix,
        )
        return generate(
            backend,
            tokenizer,
            spec,
            config.sampling,
            pa,
            item_id=item.id,
            min_answer_tokens=config.min_answer_tokens,
            literal_close=config.literal_close,
        )

    records = []
    failures = []
    saw_backend_error = False
    with ThreadPoolExecutor(max_workers=max(1, config.concurrency)) as pool:
        futures = {pool.submit(run_item, item): item for item in items}
        for future, item in futures.items():
            try:
                records.append(future.result())
            except Exception as exc:  # logged per item, reported at exit
                saw_backend_error |= isinstance(exc, BackendError)
                failures.append((item.id, f"{type(exc).__name__}: {exc}"))

    records.sort(key=lambda r: r.item_id)
    out_dir = config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records(records, out_dir / "records.jsonl")
    if failures:
        failures.sort()
        with open(out_dir / "errors.log", "w", encoding="utf-8") as f:
            for item_id, message in failures:
                f.write(f"{item_id}\t{message}\n")
        log.error("%d of %d items failed; see %s", len(failures), len(items), out_dir / "errors.log")
        return EXIT_BACKEND if saw_backend_error else EXIT_ERROR
    return EXIT_OK


def cmd_eval(config: RunConfig, records_path: Path) -> int:
    records = read_records(records_path)
    items = load_items(config.dataset)
    scores = score_records(records, items)
    method = records[0].method if records else "unknown"
    report = aggregate(scores, model=config.model_label, method=method)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    report_to_csv([report], config.output_dir / "scores.csv")
    return EXIT_OK


def cmd_judge(config: RunConfig) -> int:
    if config.judge is None:
        raise ConfigError("config has no judge section")
    section = config.judge
    items = load_items(config.dataset)
    torso_records = read_records(section.torso_records)
    baseline_records = read_records(section.baseline_records)
    client = HttpJudgeClient(
        JudgeEndpointConfig(
            base_url=section.base_url,
            model=section.model,
            token_env=section.token_env,
            timeout_seconds=section.timeout_seconds,
            max_retries=section.max_retries,
        )
    )
    tally, _ = run_pairwise(
        items,
        torso_records,
        baseline_records,
        client,
        samples=section.samples,
        repetitions=section.repetitions,
        seed=section.seed,
        concurrency=config.concurrency,
    )
    baseline_method = baseline_records[0].method if baseline_records else "baseline"
    config.output_dir.mkdir(parents=True, exist_ok=True)
    tally_to_csv(
        [(config.model_label, f"vs. {baseline_method}", tally)],
        config.output_dir / "judge.csv",
    )
    return EXIT_OK


def cmd_ablate(config: RunConfig) -> int:
    if not config.ablation_benchmarks:
        raise ConfigError("config has no ablation benchmarks")
    variants = (
        list(REGISTRY)
        if config.ablation_variants is None
        else variants_by_name(config.ablation_variants)
    )
    backend, tokenizer = build_backend(config)
    benchmarks = {name: load_items(path) for name, path in config.ablation_benchmarks.items()}
    rows = run_ablation(
        variants,
        benchmarks,
        backend,
        tokenizer,
        config.sampling,
        system_prefix=config.system_prefix,
        min_answer_tokens=config.min_answer_tokens,
        literal_close=config.literal_close,
    )
    config.output_dir.mkdir(parents=True, exist_ok=True)
    ablation_csv(rows, config.output_dir / "ablation.csv")
    return EXIT_OK


def cmd_report(config: RunConfig, records_paths: list[Path], with_plot: bool) -> int:
    records = []
    for path in records_paths:
        records.extend(read_records(path))
    items = load_items(config.dataset)
    scores = score_records(records, items)
    report = length_report(records, scores)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    length_csv(report, config.output_dir / "lengths.csv")
    if with_plot:
        plot_lengths(report, config.output_dir / "lengths.svg")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdec", description=__doc__)
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="run config JSON")
    shared.add_argument("--method", choices=METHODS, help="override the config's method")
    shared.add_argument("--seed", type=int, help="override the sampling seed")
    shared.add_argument("--out", help="override the output directory")
    shared.add_argument("--concurrency", type=int, help="override the worker-pool size")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[shared], help="decode one record per dataset item")
    eval_parser = sub.add_parser("eval", parents=[shared], help="score a records file")
    eval_parser.add_argument("--records", required=True, help="records JSONL to score")
    sub.add_parser("judge", parents=[shared], help="pairwise rationale judging")
    sub.add_parser("ablate", parents=[shared], help="template-variant matrix")
    report_parser = sub.add_parser("report", parents=[shared], help="length accounting")
    report_parser.add_argument(
        "--records", required=True, nargs="+", help="records JSONL files (one or more methods)"
    )
    report_parser.add_argument("--plot", action="store_true", help="also write an SVG bar chart")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, overrides=args)
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "eval":
            return cmd_eval(config, Path(args.records))
        if args.command == "judge":
            return cmd_judge(config)
        if args.command == "ablate":
            return cmd_ablate(config)
        return cmd_report(config, [Path(p) for p in args.records], args.plot)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EmptyBenchmarkError, InsufficientEligibleItemsError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except TdecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
