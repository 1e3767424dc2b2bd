"""Single `coi` executable exposing the pipeline as subcommands.

Exit codes: 0 success, 1 validation/configuration error, 2 I/O or transport
error. Every run writes a manifest (config digest, seeds, input and output
digests) into the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__, composer, dataset_builder, downstream, evaluator, summarizer
from .config import PipelineConfig, build_gateway
from .corpus import filter_english_input, load_seed_corpus, serialize_seed_corpus
from .errors import ConfigurationError, ThrottledError, TransportError, ValidationError
from .manifest import write_manifest

logger = logging.getLogger(__name__)


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "config", None):
        config = PipelineConfig.from_file(args.config)
    else:
        config = PipelineConfig()
    overrides = (
        ("output_dir", "output_dir"),
        ("provider", "provider"),
        ("max_chain_length", "max_chain_length"),
        ("cap_per_category", "cap_per_category"),
        ("test_fraction", "test_fraction"),
        ("variant", "variant"),
    )
    for attr, key in overrides:
        value = getattr(args, attr, None)
        if value is not None:
            setattr(config, key, value)
    seed = getattr(args, "seed", None)
    if seed is not None:
        config.sample_seed = config.split_seed = config.judge_seed = seed
    config.validate()
    return config


def _out_dir(config: PipelineConfig) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require_input(path: str | Path | None, what: str) -> Path:
    if path is None:
        raise ValidationError(f"{what} is required (flag or config)")
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"{what} not found: {path}")
    return path


def _write_jsonl(path: Path, records: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def cmd_ingest(config: PipelineConfig, args: argparse.Namespace) -> int:
    corpus_path = _require_input(args.corpus or config.seed_corpus, "seed corpus")
    out = _out_dir(config)
    tasks = load_seed_corpus(corpus_path, allow_empty=config.allow_empty)
    total = len(tasks)
    if not args.all_languages:
        tasks = filter_english_input(tasks)
    tasks_path = out / "tasks.jsonl"
    serialize_seed_corpus(tasks, tasks_path)
    logger.info("ingested %d tasks (%d kept)", total, len(tasks))
    write_manifest(out, "ingest", config, {"corpus": corpus_path}, [tasks_path])
    return 0


def cmd_summarize(config: PipelineConfig, args: argparse.Namespace) -> int:
    out = _out_dir(config)
    tasks_path = _require_input(args.tasks or out / "tasks.jsonl", "tasks file")
    tasks = load_seed_corpus(tasks_path, allow_empty=config.allow_empty)
    gateway = build_gateway(config)

    def summarize(task):
        return summarizer.summarize_instruction(
            task,
            gateway,
            model_id=config.model_id,
            retry_limit=config.summary_retry_limit,
            prompts_dir=config.prompts_dir,
        )

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        summaries = list(pool.map(summarize, tasks))
    summaries_path = out / "summaries.jsonl"
    summarizer.serialize_summaries(summaries, summaries_path)
    stats = summarizer.corpus_word_stats(tasks, summaries)
    stats_path = out / "word_stats.json"
    _write_json(stats_path, {k: round(v, 4) for k, v in stats.items()})
    logger.info(
        "summarized %d instructions (mean words %.2f -> %.2f)",
        len(summaries), stats["mean_before"], stats["mean_after"],
    )
    write_manifest(
        out, "summarize", config, {"tasks": tasks_path}, [summaries_path, stats_path]
    )
    return 0


def cmd_compose(config: PipelineConfig, args: argparse.Namespace) -> int:
    out = _out_dir(config)
    tasks_path = _require_input(args.tasks or out / "tasks.jsonl", "tasks file")
    summaries_path = _require_input(args.summaries or out / "summaries.jsonl", "summaries file")
    tasks = load_seed_corpus(tasks_path, allow_empty=config.allow_empty)
    summaries = summarizer.load_summaries(summaries_path)
    rules = composer.load_category_rules(config.rules_file)
    gateway = build_gateway(config)

    candidates = composer.sample_category_pairs(tasks, config.sample_seed)
    kept = composer.heuristic_filter(candidates, rules)
    kept_set = set(kept)
    rejections = [
        {
            "candidate": {"hops": list(c.hops), "categories": list(c.categories)},
            "stage": "heuristic",
            "reason": "final-only category at a non-final position",
        }
        for c in candidates
        if c not in kept_set
    ]

    tasks_by_id = {t.task_id: t for t in tasks}
    summaries_by_id = {s.task_id: s for s in summaries}

    def distill(candidate):
        return composer.distill_pair(
            candidate,
            tasks_by_id,
            summaries_by_id,
            gateway,
            seed=config.sample_seed,
            model_id=config.model_id,
            rewrite=config.consistency_rewrite,
            prompts_dir=config.prompts_dir,
        )

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(distill, kept))
    chains = []
    for candidate, (chain, reason) in zip(kept, results):
        if chain is not None:
            chains.append(chain)
        else:
            rejections.append(
                {
                    "candidate": {"hops": list(candidate.hops), "categories": list(candidate.categories)},
                    "stage": "composability",
                    "reason": reason,
                }
            )
    chains_path = out / "chains_2.jsonl"
    composer.serialize_chains(chains, chains_path)
    rejections_path = out / "rejections.jsonl"
    _write_jsonl(rejections_path, rejections)
    logger.info(
        "composed %d chains from %d candidates (%d rejected)",
        len(chains), len(candidates), len(rejections),
    )
    inputs = {"tasks": tasks_path, "summaries": summaries_path}
    if config.rules_file:
        inputs["rules"] = Path(config.rules_file)
    write_manifest(out, "compose", config, inputs, [chains_path, rejections_path])
    return 0


def cmd_extend(config: PipelineConfig, args: argparse.Namespace) -> int:
    out = _out_dir(config)
    chains_path = _require_input(args.chains or out / "chains_2.jsonl", "chains file")
    pairs = composer.load_chains(chains_path)
    rules = composer.load_category_rules(config.rules_file)
    gateway = build_gateway(config)

    rejections: list[dict] = []
    outputs = []
    current = pairs
    for k in range(2, config.max_chain_length):
        current = composer.extend_chains(
            current,
            pairs,
            gateway,
            rules=rules,
            model_id=config.model_id,
            rewrite=config.consistency_rewrite,
            prompts_dir=config.prompts_dir,
            rejections=rejections,
        )
        if not current:
            logger.info("no chains of length %d; stopping extension", k + 1)
            break
        path = out / f"chains_{k + 1}.jsonl"
        composer.serialize_chains(current, path)
        outputs.append(path)
        logger.info("extended to %d chains of length %d", len(current), k + 1)
    rejections_path = out / "extend_rejections.jsonl"
    _write_jsonl(rejections_path, rejections)
    outputs.append(rejections_path)
    inputs = {"chains": chains_path}
    if config.rules_file:
        inputs["rules"] = Path(config.rules_file)
    write_manifest(out, "extend", config, inputs, outputs)
    return 0


def cmd_build(config: PipelineConfig, args: argparse.Namespace) -> int:
    out = _out_dir(config)
    tasks_path = _require_input(args.tasks or out / "tasks.jsonl", "tasks file")
    summaries_path = _require_input(args.summaries or out / "summaries.jsonl", "summaries file")
    if args.chains:
        chain_paths = [_require_input(p, "chains file") for p in args.chains]
    else:
        chain_paths = sorted(out.glob("chains_*.jsonl"))
        if not chain_paths:
            raise ValidationError(f"no chains_*.jsonl files found in {out}")
    tasks = load_seed_corpus(tasks_path, allow_empty=config.allow_empty)
    summaries_by_id = {s.task_id: s for s in summarizer.load_summaries(summaries_path)}

    coi1: list[dataset_builder.CoiExample] = []
    for task in tasks:
        summary = summaries_by_id.get(task.task_id)
        if summary is None:
            raise ValidationError(f"no summary for task {task.task_id!r}")
        coi1.extend(
            dataset_builder.task_to_examples(
                task, summary.summary, config.instances_per_task, config.sample_seed
            )
        )

    chains = []
    for path in chain_paths:
        chains.extend(composer.load_chains(path))
    if config.variant == "irrelevant":
        chains = [
            composer.build_irrelevant_variant(c, tasks, config.sample_seed) for c in chains
        ]
    elif config.variant == "concise":
        gateway = build_gateway(config)
        chains = [
            composer.build_concise_variant(
                c,
                gateway,
                model_id=config.model_id,
                retry_limit=config.concise_retry_limit,
                prompts_dir=config.prompts_dir,
            )
            for c in chains
        ]

    chain_examples = [dataset_builder.chain_to_example(c) for c in chains]
    chain_examples = dataset_builder.limit_per_category(
        chain_examples, config.cap_per_category, config.sample_seed
    )
    middle = [e for e in chain_examples if e.chain_length < config.test_only_from]
    high = [
        replace(e, split="test")
        for e in chain_examples
        if e.chain_length >= config.test_only_from
    ]
    middle = dataset_builder.split_train_test(middle, config.test_fraction, config.split_seed)
    mixture = dataset_builder.build_mixture(
        [(coi1, None), (middle + high, None)], names=["coi1", "chains"]
    )
    dataset_path = out / "dataset.jsonl"
    dataset_builder.serialize_dataset(mixture, dataset_path)
    report = dataset_builder.compute_report(mixture)
    logger.info("built dataset with %d examples:\n%s", report.total(), report.to_text())
    inputs = {"tasks": tasks_path, "summaries": summaries_path}
    for path in chain_paths:
        inputs[Path(path).name] = path
    write_manifest(out, "build", config, inputs, [dataset_path])
    return 0


def cmd_stats(config: PipelineConfig, args: argparse.Namespace) -> int:
    out = _out_dir(config)
    dataset_path = _require_input(args.dataset, "dataset file")
    examples = dataset_builder.load_dataset(dataset_path)
    report = dataset_builder.compute_report(examples)
    report_json = out / "report.json"
    _write_json(report_json, report.to_json_dict())
    report_txt = out / "report.txt"
    report_txt.write_text(report.to_text() + "\n", encoding="utf-8")
    print(report.to_text())
    write_manifest(out, "stats", config, {"dataset": dataset_path}, [report_json, report_txt])
    return 0


def _example_to_chain(example: dataset_builder.CoiExample) -> composer.ComposedChain:
    """Reconstruct a gold-chain view of a dataset example for subtask scoring."""
    hop_outputs = dataset_builder.parse_target(example.target, example.chain_length)
    texts = example.instruction.split(composer.CONNECTOR)
    if len(texts) != example.chain_length:
        texts = [example.instruction] * example.chain_length
    return composer.ComposedChain(
        hops=tuple(
            composer.ChainHop(f"hop{i + 1}", text) for i, text in enumerate(texts)
        ),
        joined_instruction=example.instruction,
        input=example.input,
        hop_outputs=tuple(hop_outputs),
        categories=example.category_path,
    )


def cmd_eval(config: PipelineConfig, args: argparse.Namespace) -> int:
    out = _out_dir(config)
    dataset_path = _require_input(args.dataset, "dataset file")
    predictions_path = _require_input(args.predictions, "predictions file")
    examples = dataset_builder.load_dataset(dataset_path)
    predictions = evaluator.load_predictions(predictions_path)

    matched = [(e, predictions[e.example_id]) for e in examples if e.example_id in predictions]
    skipped = len(examples) - len(matched)
    if skipped:
        logger.warning("%d dataset examples have no prediction; skipped", skipped)
    if not matched:
        raise ValidationError("no predictions matched the dataset")

    rows: list[dict] = []
    summary: dict = {
        "mode": args.mode,
        "tokenizer_version": evaluator.TOKENIZER_VERSION,
        "count": len(matched),
        "skipped": skipped,
    }
    if args.mode == "whole":
        scores = []
        for example, output in matched:
            score = evaluator.score_whole(output, example.target)
            scores.append(score)
            rows.append(
                {
                    "example_id": example.example_id,
                    "precision": score.precision,
                    "recall": score.recall,
                    "f1": score.f1,
                }
            )
        summary["scores"] = evaluator.aggregate_scores(scores)
    else:
        mode = "marker" if args.mode == "subtask-marker" else "llm"
        gateway = build_gateway(config) if mode == "llm" else None
        by_length: dict[int, list[list[evaluator.SubtaskScore]]] = {}
        for example, output in matched:
            chain = _example_to_chain(example)
            hop_scores = evaluator.score_subtasks(
                output,
                chain,
                mode=mode,
                gateway=gateway,
                model_id=config.model_id,
                prompts_dir=config.prompts_dir,
            )
            by_length.setdefault(example.chain_length, []).append(hop_scores)
            rows.append(
                {
                    "example_id": example.example_id,
                    "chain_length": example.chain_length,
                    "hops": [
                        {"hop": s.hop_index, "f1": s.score.f1, "valid": s.valid, "span": s.span}
                        for s in hop_scores
                    ],
                }
            )
        summary["by_chain_length"] = {
            str(k): evaluator.aggregate_subtasks(v) for k, v in sorted(by_length.items())
        }
    scores_path = out / "scores.jsonl"
    _write_jsonl(scores_path, rows)
    summary_path = out / "eval_summary.json"
    _write_json(summary_path, summary)
    print(_eval_summary_text(summary))
    write_manifest(
        out, "eval", config,
        {"dataset": dataset_path, "predictions": predictions_path},
        [scores_path, summary_path],
    )
    return 0


def _eval_summary_text(summary: dict) -> str:
    lines = [
        f"mode: {summary['mode']}  examples: {summary['count']}  "
        f"skipped: {summary['skipped']}  tokenizer: {summary['tokenizer_version']}"
    ]
    if "scores" in summary:
        scores = summary["scores"]
        lines.append(
            f"mean F1 {scores['mean_f1']:.2f}  precision {scores['mean_precision']:.2f}  "
            f"recall {scores['mean_recall']:.2f}"
        )
    else:
        lines.append(f"{'length':>6}  {'hop':>3}  {'mean F1':>8}  {'valid':>6}  {'total':>6}")
        for length, hops in summary["by_chain_length"].items():
            for hop in hops:
                lines.append(
                    f"{length:>6}  {hop['hop']:>3}  {hop['mean_f1']:>8.2f}  "
                    f"{hop['valid']:>6}  {hop['total']:>6}"
                )
    return "\n".join(lines)


def cmd_judge(config: PipelineConfig, args: argparse.Namespace) -> int:
    out = _out_dir(config)
    dataset_path = _require_input(args.dataset, "dataset file")
    a_path = _require_input(args.predictions_a, "predictions A file")
    b_path = _require_input(args.predictions_b, "predictions B file")
    examples = dataset_builder.load_dataset(dataset_path)
    preds_a = evaluator.load_predictions(a_path)
    preds_b = evaluator.load_predictions(b_path)
    gateway = build_gateway(config)

    rng = random.Random(config.judge_seed)
    rows = []
    preferences = []
    for example in examples:
        if example.example_id not in preds_a or example.example_id not in preds_b:
            continue
        preference = evaluator.judge_pair(
            example.instruction,
            example.input,
            example.target,
            preds_a[example.example_id],
            preds_b[example.example_id],
            gateway,
            rng,
            model_id=config.model_id,
            prompts_dir=config.prompts_dir,
        )
        preferences.append(preference)
        rows.append(
            {
                "example_id": example.example_id,
                "winner": preference.winner,
                "raw_verdict": preference.raw_verdict,
                "order_swapped": preference.order_swapped,
            }
        )
    if not preferences:
        raise ValidationError("no examples had predictions on both sides")
    judgments_path = out / "judgments.jsonl"
    _write_jsonl(judgments_path, rows)
    summary = evaluator.aggregate_preferences(preferences)
    summary_path = out / "judge_summary.json"
    _write_json(summary_path, summary)
    print(
        f"judged {summary['count']} pairs  A {summary['A']:.2f}%  "
        f"B {summary['B']:.2f}%  None {summary['None']:.2f}%"
    )
    write_manifest(
        out, "judge", config,
        {"dataset": dataset_path, "predictions_a": a_path, "predictions_b": b_path},
        [judgments_path, summary_path],
    )
    return 0


def cmd_downstream(config: PipelineConfig, args: argparse.Namespace) -> int:
    out = _out_dir(config)
    outputs_path = _require_input(args.outputs, "outputs file")
    refs_path = _require_input(args.refs, "references file")
    outputs = evaluator.load_predictions(outputs_path)
    refs = downstream.load_references(refs_path)
    mode = "marker" if args.mode == "marker" else "language_id"
    report = downstream.evaluate_downstream(outputs, refs, mode=mode)
    report_path = out / "downstream_report.json"
    _write_json(
        report_path,
        {
            "mode": mode,
            "tokenizer_version": evaluator.TOKENIZER_VERSION,
            **report.to_json_dict(),
        },
    )
    print(report.to_text())
    write_manifest(
        out, "downstream", config,
        {"outputs": outputs_path, "refs": refs_path},
        [report_path],
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coi",
        description="Build and evaluate chained-instruction datasets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--output-dir", dest="output_dir", help="where outputs are written")
        p.add_argument("--provider", choices=["mock", "remote"])
        p.add_argument("--seed", type=int, help="override all seeds")

    p = sub.add_parser("ingest", help="load, validate, and filter a seed corpus")
    common(p)
    p.add_argument("--corpus", help="seed corpus JSONL")
    p.add_argument(
        "--all-languages", action="store_true",
        help="keep tasks with non-English input language",
    )
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("summarize", help="shorten instructions via the LLM")
    common(p)
    p.add_argument("--tasks", help="tasks JSONL (default: <output-dir>/tasks.jsonl)")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("compose", help="build length-2 chains with the composability check")
    common(p)
    p.add_argument("--tasks")
    p.add_argument("--summaries")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("extend", help="grow chains to the configured maximum length")
    common(p)
    p.add_argument("--chains", help="length-2 chains JSONL")
    p.add_argument("--max-chain-length", dest="max_chain_length", type=int)
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("build", help="assemble the train/test dataset")
    common(p)
    p.add_argument("--tasks")
    p.add_argument("--summaries")
    p.add_argument("--chains", nargs="*", help="chains files (default: chains_*.jsonl)")
    p.add_argument("--cap-per-category", dest="cap_per_category", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--variant", choices=["standard", "concise", "irrelevant"])
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("stats", help="report dataset statistics")
    common(p)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="score predictions against a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument(
        "--mode", choices=["whole", "subtask-marker", "subtask-llm"], default="whole"
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("judge", help="pairwise LLM preference between two prediction sets")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions-a", dest="predictions_a", required=True)
    p.add_argument("--predictions-b", dest="predictions_b", required=True)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("downstream", help="bilingual summarization scoring")
    common(p)
    p.add_argument("--outputs", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--mode", choices=["marker", "language-id"], default="marker")
    p.set_defaults(func=cmd_downstream)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _resolve_config(args)
        return args.func(config, args)
    except (ValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ThrottledError, TransportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
