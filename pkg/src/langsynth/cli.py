"""Command-line interface: generate datasets, run the learning loop,
evaluate checkpoints, and combine run reports."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .domains import get_domain, load_tasks, save_tasks
from .harness import (
    MODES,
    RunConfig,
    SearchBudget,
    evaluate,
    load_checkpoint,
    report,
    run,
)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    defaults = RunConfig()
    p.add_argument("--domain", default=defaults.domain, choices=("strings", "graphics"))
    p.add_argument("--train", dest="train_path", required=True)
    p.add_argument("--test", dest="test_path", default="")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--mode", default=defaults.mode, choices=MODES)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--budget", type=int, default=defaults.budget)
    p.add_argument("--budget-seconds", type=float, default=None)
    p.add_argument("--test-budget", type=int, default=None)
    p.add_argument("--beam-width", type=int, default=defaults.beam_width)
    p.add_argument("--language-at-test", action=argparse.BooleanOptionalAction,
                   default=defaults.language_at_test)
    p.add_argument("--curriculum", action=argparse.BooleanOptionalAction,
                   default=defaults.curriculum)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--eval-interval", type=int, default=defaults.eval_interval)
    p.add_argument("--recognition-steps", type=int, default=defaults.recognition_steps)
    p.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    p.add_argument("--structure-penalty", type=float, default=defaults.structure_penalty)
    p.add_argument("--pseudocounts", type=float, default=defaults.pseudocounts)
    p.add_argument("--max-new-abstractions", type=int, default=defaults.max_new_abstractions)
    p.add_argument("--max-arity", type=int, default=defaults.max_arity)
    p.add_argument("--refactor-depth", type=int, default=defaults.refactor_depth)
    p.add_argument("--translation-weight", type=float, default=defaults.translation_weight)
    p.add_argument("--em-iterations", type=int, default=defaults.em_iterations)
    p.add_argument("--me-alpha", type=float, default=defaults.me_alpha)
    p.add_argument("--workers", type=int, default=defaults.workers)


def _config_from_args(args) -> RunConfig:
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    return RunConfig(**{k: v for k, v in vars(args).items() if k in fields})


def cmd_generate(args) -> int:
    domain = get_domain(args.domain)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.domain == "graphics":
        from .domains.graphics import generate_graphics_dataset

        train, test = generate_graphics_dataset(args.n_train, args.n_test, args.seed)
    else:
        from .domains.strings import generate_string_dataset

        train, test = generate_string_dataset(
            args.n_train, args.n_test, args.seed, args.examples_per_task
        )
    save_tasks(out / "train.jsonl", domain, train)
    save_tasks(out / "test.jsonl", domain, test)
    print(f"wrote {len(train)} train and {len(test)} test tasks to {out}")
    return 0


def cmd_run(args) -> int:
    config = _config_from_args(args)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
    checkpoint = run(config, resume_from=resume)
    final = checkpoint.metrics[-1] if checkpoint.metrics else None
    if final and final.get("test_rate_with_language") is not None:
        print(
            f"finished: library={len(checkpoint.grammar)} "
            f"solved={final['total_solved']}/{final['train_tasks']} "
            f"test(lang)={final['test_rate_with_language']} "
            f"test(nolang)={final['test_rate_without_language']}"
        )
    else:
        print(f"finished: library={len(checkpoint.grammar)}")
    return 0


def cmd_evaluate(args) -> int:
    checkpoint = load_checkpoint(args.run_dir)
    domain = get_domain(checkpoint.config.domain)
    tasks = load_tasks(args.tasks, domain)
    budget = SearchBudget(args.budget or checkpoint.config.budget)
    rate = evaluate(
        checkpoint,
        tasks,
        budget,
        use_language=args.use_language,
        guidance=args.guidance,
        workers=args.workers,
    )
    print(f"solve rate: {rate:.4f} ({round(rate * len(tasks))}/{len(tasks)})")
    return 0


def cmd_report(args) -> int:
    text = report(args.runs, args.out)
    print(text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="langsynth")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a task dataset")
    g.add_argument("--domain", default="strings", choices=("strings", "graphics"))
    g.add_argument("--n-train", type=int, default=100)
    g.add_argument("--n-test", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--examples-per-task", type=int, default=30)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    r = sub.add_parser("run", help="run the learning loop")
    _add_run_flags(r)
    r.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    r.set_defaults(fn=cmd_run)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a task file")
    e.add_argument("--run-dir", required=True)
    e.add_argument("--tasks", required=True)
    e.add_argument("--budget", type=int, default=None)
    e.add_argument("--use-language", action=argparse.BooleanOptionalAction, default=True)
    e.add_argument("--guidance", default="recognition", choices=("recognition", "grammar"))
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="combine metrics from one or more runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
