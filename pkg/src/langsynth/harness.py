"""The outer learning loop: train the conditional model, search a batch,
compress, refit, and retrain the translation model, with checkpointing,
held-out evaluation, ablation modes, and metrics reporting.

Every stochastic component draws its seed deterministically from the
master seed and the iteration number, so a run is reproducible
bit-for-bit and resuming from a checkpoint continues the exact same
trajectory.
"""
from __future__ import annotations

import dataclasses
import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from .domains import Domain, get_domain, load_tasks
from .grammar import CompressionParams, Grammar, fit_weights
from .compression import compress
from .recognition import (
    RecognitionGrammar,
    RecognitionModel,
    make_joint_sampler,
    predict,
    train,
)
from .search import Frontier, FrontierEntry, SearchBudget, solve_tasks
from .terms import parse_term, print_term
from .translation import (
    SmoothedLM,
    TranslationParams,
    TranslationTable,
    AlignmentRecord,
    apply_mutual_exclusivity,
    linearize,
    train_em,
)
from .types import parse_type

MODES = ("baseline-no-language", "multimodal-no-generative", "laps", "laps+me", "laps+me+compression")

DEFAULT_ITERATIONS = {"strings": 10, "graphics": 27}


@dataclass
class ModeFlags:
    language: bool
    joint_samples: bool
    translation: bool
    mutual_exclusivity: bool
    translation_compression: bool


def mode_flags(mode: str) -> ModeFlags:
    if mode == "baseline-no-language":
        return ModeFlags(False, True, False, False, False)
    if mode == "multimodal-no-generative":
        return ModeFlags(True, False, False, False, False)
    if mode == "laps":
        return ModeFlags(True, True, True, False, False)
    if mode == "laps+me":
        return ModeFlags(True, True, True, True, False)
    if mode == "laps+me+compression":
        return ModeFlags(True, True, True, True, True)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass
class RunConfig:
    domain: str = "strings"
    train_path: str = ""
    test_path: str = ""
    out_dir: str = "run"
    mode: str = "laps+me+compression"
    iterations: int | None = None
    batch_size: int = 40
    budget: int = 200000
    budget_seconds: float | None = None
    test_budget: int | None = None
    beam_width: int = 5
    language_at_test: bool = True
    curriculum: bool = False
    seed: int = 0
    eval_interval: int = 0
    recognition_steps: int = 10000
    learning_rate: float = 0.05
    structure_penalty: float = 1.5
    pseudocounts: float = 30.0
    max_new_abstractions: int = 5
    max_arity: int = 3
    refactor_depth: int = 2
    translation_weight: float = 1.0
    em_iterations: int = 10
    me_alpha: float = 0.1
    workers: int = 1

    def resolved_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return DEFAULT_ITERATIONS.get(self.domain, 10)

    def resolved_workers(self) -> int:
        env = os.environ.get("LANGSYNTH_WORKERS")
        if env:
            return max(1, int(env))
        return max(1, self.workers)

    def compression_params(self, flags: ModeFlags) -> CompressionParams:
        return CompressionParams(
            structure_penalty=self.structure_penalty,
            pseudocounts=self.pseudocounts,
            max_new_abstractions=self.max_new_abstractions,
            max_arity=self.max_arity,
            refactor_depth=self.refactor_depth,
            translation_weight=self.translation_weight if flags.translation_compression else 0.0,
        )

    def translation_params(self, flags: ModeFlags) -> TranslationParams:
        return TranslationParams(
            em_iterations=self.em_iterations,
            me_alpha=self.me_alpha,
            me_enabled=flags.mutual_exclusivity,
        )


def derive_seed(master: int, tag: str, iteration: int = 0) -> int:
    return zlib.crc32(f"{master}:{tag}:{iteration}".encode()) & 0x7FFFFFFF


@dataclass
class Checkpoint:
    iteration: int
    grammar: Grammar
    translation: TranslationTable | None
    model: RecognitionModel | None
    frontiers: dict
    metrics: list
    config: RunConfig


METRIC_COLUMNS = (
    "iteration",
    "batch_solved",
    "total_solved",
    "train_tasks",
    "library_size",
    "invented",
    "objective_before",
    "objective_after",
    "accepted",
    "test_rate_with_language",
    "test_rate_without_language",
)


def _metrics_text(rows) -> str:
    def cell(value):
        if value is None:
            return ""
        if isinstance(value, str):
            return value
        return repr(value)

    lines = ["\t".join(METRIC_COLUMNS)]
    for row in rows:
        lines.append("\t".join(cell(row[c]) for c in METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def parse_metrics(text: str) -> list[dict]:
    lines = [l for l in text.splitlines() if l.strip()]
    header = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        parts = line.split("\t")
        row = {}
        for name, value in zip(header, parts):
            if name in ("iteration", "batch_solved", "total_solved", "train_tasks",
                        "library_size", "invented"):
                row[name] = int(value)
            elif name in ("objective_before", "objective_after",
                          "test_rate_with_language", "test_rate_without_language"):
                row[name] = float(value) if value != "" else None
            else:
                row[name] = value
        rows.append(row)
    return rows


def _description_vocab(tasks) -> set[str]:
    vocab: set[str] = set()
    for t in tasks:
        if t.description:
            vocab.update(t.description)
    return vocab


def _uniform_translation(grammar: Grammar, tasks) -> TranslationTable:
    return TranslationTable.uniform(
        [p.name for p in grammar.productions], sorted(_description_vocab(tasks))
    )


def _train_recognition(
    config: RunConfig,
    flags: ModeFlags,
    grammar: Grammar,
    translation: TranslationTable | None,
    lm: SmoothedLM | None,
    domain: Domain,
    frontier_store: dict,
    tasks_by_id: dict,
    vocab,
    iteration: int,
) -> RecognitionModel:
    model = RecognitionModel(
        grammar, domain, seed=derive_seed(config.seed, "model", iteration), vocab=vocab
    )
    sampler = None
    if flags.joint_samples:
        sampler = make_joint_sampler(
            grammar, translation if flags.translation else None, lm, domain
        )
    frontiers = [frontier_store[k] for k in sorted(frontier_store)]
    return train(
        model,
        frontiers,
        tasks_by_id,
        domain,
        joint_sampler=sampler,
        steps=config.recognition_steps,
        seed=derive_seed(config.seed, "train", iteration),
        learning_rate=config.learning_rate,
        use_language=flags.language,
    )


def _search(
    config: RunConfig,
    flags: ModeFlags,
    model: RecognitionModel | None,
    grammar: Grammar,
    domain: Domain,
    tasks,
    budget: SearchBudget,
    use_language: bool,
) -> list[Frontier]:
    dists = []
    for t in tasks:
        if model is None:
            dists.append(grammar)
        else:
            description = t.description if (use_language and flags.language) else None
            tensor = predict(model, t, domain, description, grammar=grammar)
            dists.append(RecognitionGrammar(grammar, tensor))
    return solve_tasks(
        tasks, dists, budget, config.beam_width, domain, config.resolved_workers()
    )


def run(config: RunConfig, resume_from: Checkpoint | None = None) -> Checkpoint:
    flags = mode_flags(config.mode)
    domain = get_domain(config.domain)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(dataclasses.asdict(config), indent=2, sort_keys=True) + "\n"
    )

    train_tasks = load_tasks(config.train_path, domain)
    test_tasks = load_tasks(config.test_path, domain) if config.test_path else []
    tasks_by_id = {t.id: t for t in train_tasks}
    vocab = frozenset(_description_vocab(train_tasks))
    lm = SmoothedLM([t.description for t in train_tasks if t.description])

    import numpy as np

    if config.curriculum:
        order = sorted(
            range(len(train_tasks)),
            key=lambda i: (len(train_tasks[i].description or []), train_tasks[i].id),
        )
    else:
        rng = np.random.default_rng(derive_seed(config.seed, "order"))
        order = list(rng.permutation(len(train_tasks)))

    iterations = config.resolved_iterations()
    budget = SearchBudget(config.budget, config.budget_seconds)

    if resume_from is not None:
        grammar = resume_from.grammar
        translation = resume_from.translation
        frontier_store = dict(resume_from.frontiers)
        metrics = list(resume_from.metrics)
        start = resume_from.iteration
    else:
        grammar = domain.base_grammar()
        translation = _uniform_translation(grammar, train_tasks) if flags.translation else None
        frontier_store = {}
        metrics = []
        start = 0

    model: RecognitionModel | None = None
    for i in range(start, iterations):
        model = _train_recognition(
            config, flags, grammar, translation, lm, domain,
            frontier_store, tasks_by_id, vocab, i,
        )
        n = len(train_tasks)
        batch_start = (i * config.batch_size) % n if n else 0
        picked = [order[(batch_start + j) % n] for j in range(min(config.batch_size, n))]
        batch = [train_tasks[j] for j in picked]
        new_frontiers = _search(
            config, flags, model, grammar, domain, batch, budget, use_language=True
        )
        batch_solved = sum(1 for f in new_frontiers if not f.empty)
        for f in new_frontiers:
            if f.empty:
                continue
            if f.task_id in frontier_store:
                frontier_store[f.task_id] = frontier_store[f.task_id].merged_with(f)
            else:
                frontier_store[f.task_id] = f

        all_frontiers = [frontier_store[k] for k in sorted(frontier_store)]
        params = config.compression_params(flags)
        translation_for_compression = (
            translation
            if flags.translation_compression and translation is not None and translation.alignments
            else None
        )
        result = compress(all_frontiers, grammar, translation_for_compression, params)
        grammar = result.grammar
        frontier_store = {f.task_id: f for f in result.frontiers}
        (out_dir / f"compression-{i:03d}.txt").write_text(result.report())

        all_frontiers = [frontier_store[k] for k in sorted(frontier_store)]
        grammar = fit_weights(grammar, all_frontiers, config.pseudocounts)

        if flags.translation:
            pairs = []
            for k in sorted(frontier_store):
                task = tasks_by_id.get(k)
                f = frontier_store[k]
                if task is not None and task.description and not f.empty:
                    pairs.append((linearize(f.best().program), task.description))
            if pairs:
                translation = train_em(pairs, config.translation_params(flags))
                if flags.mutual_exclusivity:
                    unsolved_words = _description_vocab(
                        [t for t in train_tasks if t.id not in frontier_store]
                    )
                    new_words = unsolved_words - translation.vocab_known
                    if new_words:
                        translation = apply_mutual_exclusivity(
                            translation, grammar, new_words, config.me_alpha
                        )

        row = {
            "iteration": i,
            "batch_solved": batch_solved,
            "total_solved": len(frontier_store),
            "train_tasks": len(train_tasks),
            "library_size": len(grammar),
            "invented": sum(1 for p in grammar.productions if p.is_invented),
            "objective_before": result.objective_before,
            "objective_after": result.objective_after,
            "accepted": ";".join(print_term(c.body) for c in result.accepted),
            "test_rate_with_language": None,
            "test_rate_without_language": None,
        }
        if (
            config.eval_interval
            and test_tasks
            and ((i + 1) % config.eval_interval == 0)
            and (i + 1) < iterations
        ):
            with_lang, without_lang = _evaluate_now(
                config, flags, grammar, translation, lm, domain,
                frontier_store, tasks_by_id, vocab, test_tasks, i,
            )
            row["test_rate_with_language"] = with_lang
            row["test_rate_without_language"] = without_lang
        metrics.append(row)
        _write_checkpoint(out_dir, i + 1, grammar, translation, None, frontier_store, metrics, domain)

    final_model = None
    if iterations > 0 or metrics:
        final_model = _train_recognition(
            config, flags, grammar, translation, lm, domain,
            frontier_store, tasks_by_id, vocab, iterations,
        )
    if test_tasks:
        with_lang, without_lang = _final_rates(
            config, flags, final_model, grammar, domain, test_tasks
        )
        row = {
            "iteration": iterations,
            "batch_solved": 0,
            "total_solved": len(frontier_store),
            "train_tasks": len(train_tasks),
            "library_size": len(grammar),
            "invented": sum(1 for p in grammar.productions if p.is_invented),
            "objective_before": 0.0,
            "objective_after": 0.0,
            "accepted": "",
            "test_rate_with_language": with_lang,
            "test_rate_without_language": without_lang,
        }
        metrics.append(row)
    _write_checkpoint(
        out_dir, iterations, grammar, translation, final_model, frontier_store, metrics, domain
    )
    return Checkpoint(
        iterations, grammar, translation, final_model, frontier_store, metrics, config
    )


def _evaluate_now(
    config, flags, grammar, translation, lm, domain,
    frontier_store, tasks_by_id, vocab, test_tasks, iteration,
):
    model = _train_recognition(
        config, flags, grammar, translation, lm, domain,
        frontier_store, tasks_by_id, vocab, 1_000_000 + iteration,
    )
    return _final_rates(config, flags, model, grammar, domain, test_tasks)


def _final_rates(config, flags, model, grammar, domain, test_tasks):
    budget = SearchBudget(config.test_budget or config.budget, config.budget_seconds)
    with_lang = evaluate_tasks(
        config, flags, model, grammar, domain, test_tasks, budget, use_language=True
    )
    if flags.language:
        without_lang = evaluate_tasks(
            config, flags, model, grammar, domain, test_tasks, budget, use_language=False
        )
    else:
        without_lang = with_lang
    return with_lang, without_lang


def evaluate_tasks(
    config, flags, model, grammar, domain, tasks, budget, use_language: bool
) -> float:
    if not tasks:
        return 0.0
    frontiers = _search(
        config, flags, model, grammar, domain, tasks, budget, use_language=use_language
    )
    return sum(1 for f in frontiers if not f.empty) / len(tasks)


def evaluate(
    checkpoint: Checkpoint,
    test_tasks,
    budget: SearchBudget,
    use_language: bool = True,
    guidance: str = "recognition",
    workers: int | None = None,
) -> float:
    """Held-out solve rate for a finished run.

    guidance="recognition" enumerates under the trained conditional
    model; "grammar" enumerates from the library prior alone (the
    enumerative protocol).
    """
    config = checkpoint.config
    if workers is not None:
        config = dataclasses.replace(config, workers=workers)
    flags = mode_flags(config.mode)
    domain = get_domain(config.domain)
    model = checkpoint.model if guidance == "recognition" else None
    if not use_language:
        flags = dataclasses.replace(flags, language=False)
    return evaluate_tasks(
        config, flags, model, checkpoint.grammar, domain, test_tasks, budget,
        use_language=use_language,
    )


# ----------------------------------------------------------------------
# Checkpoint persistence
# ----------------------------------------------------------------------

def _write_checkpoint(out_dir: Path, iteration, grammar, translation, model, frontier_store, metrics, domain):
    (out_dir / "grammar.txt").write_text(grammar.save_text())
    if translation is not None:
        (out_dir / "translation.txt").write_text(translation.save_text())
        # Resume needs bit-exact state; the fixed-precision table rows
        # above stay the interchange format.
        aux = {
            "alignments": [
                {
                    "program_tokens": r.program_tokens,
                    "description_tokens": r.description_tokens,
                    "links": sorted(list(r.links)),
                }
                for r in translation.alignments
            ],
            "word_given_prim": [[l, w, p] for (l, w), p in sorted(translation.word_given_prim.items())],
            "prim_given_word": [[l, w, p] for (l, w), p in sorted(translation.prim_given_word.items())],
            "counts": [[l, w, c] for (l, w), c in sorted(translation.counts.items())],
            "vocab_known": sorted(translation.vocab_known),
            "vocab_new": sorted(translation.vocab_new),
        }
        (out_dir / "translation-state.json").write_text(json.dumps(aux) + "\n")
    if model is not None:
        (out_dir / "recognition.txt").write_text(model.save_text())
    frontiers_blob = {}
    for k in sorted(frontier_store):
        f = frontier_store[k]
        frontiers_blob[k] = {
            "request": str(f.request),
            "beam_width": f.beam_width,
            "entries": [
                {
                    "program": print_term(e.program),
                    "log_prior": e.log_prior,
                    "log_posterior": e.log_posterior,
                }
                for e in f.entries
            ],
        }
    (out_dir / "frontiers.json").write_text(json.dumps(frontiers_blob, sort_keys=True) + "\n")
    (out_dir / "state.json").write_text(json.dumps({"iteration": iteration}) + "\n")
    (out_dir / "metrics.tsv").write_text(_metrics_text(metrics))


def load_checkpoint(run_dir: str | Path, config: RunConfig | None = None) -> Checkpoint:
    run_dir = Path(run_dir)
    if config is None:
        blob = json.loads((run_dir / "config.json").read_text())
        config = RunConfig(**blob)
    domain = get_domain(config.domain)
    grammar = Grammar.load_text((run_dir / "grammar.txt").read_text(), domain.literal_names)
    translation = None
    if (run_dir / "translation.txt").exists():
        translation = TranslationTable.load_text((run_dir / "translation.txt").read_text())
        aux_path = run_dir / "translation-state.json"
        if aux_path.exists():
            aux = json.loads(aux_path.read_text())
            translation.word_given_prim = {(l, w): p for l, w, p in aux["word_given_prim"]}
            translation.prim_given_word = {(l, w): p for l, w, p in aux["prim_given_word"]}
            translation.counts = {(l, w): c for l, w, c in aux["counts"]}
            translation.vocab_known = frozenset(aux["vocab_known"])
            translation.vocab_new = frozenset(aux["vocab_new"])
            translation.alignments = [
                AlignmentRecord(
                    r["program_tokens"],
                    r["description_tokens"],
                    frozenset(tuple(link) for link in r["links"]),
                )
                for r in aux["alignments"]
            ]
    model = None
    if (run_dir / "recognition.txt").exists():
        model = RecognitionModel(grammar, domain, seed=0)
        model.load_params_text((run_dir / "recognition.txt").read_text())
        model.grammar_version = grammar.version
    frontier_store = {}
    inventions = grammar.invented
    blob = json.loads((run_dir / "frontiers.json").read_text())
    for k, f in blob.items():
        entries = [
            FrontierEntry(
                parse_term(e["program"], inventions=inventions, literals=domain.literal_names),
                e["log_prior"],
                e["log_posterior"],
            )
            for e in f["entries"]
        ]
        frontier_store[k] = Frontier(k, parse_type(f["request"]), entries, f["beam_width"])
    metrics = parse_metrics((run_dir / "metrics.tsv").read_text()) if (run_dir / "metrics.tsv").exists() else []
    iteration = json.loads((run_dir / "state.json").read_text())["iteration"]
    return Checkpoint(iteration, grammar, translation, model, frontier_store, metrics, config)


# ----------------------------------------------------------------------
# Reporting
# ----------------------------------------------------------------------

def report(run_dirs, out_path: str | Path | None = None) -> str:
    """Combine run metrics into a delimited results block plus a
    human-readable comparison table (best and mean per mode)."""
    rows = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        config = json.loads((run_dir / "config.json").read_text())
        metrics = parse_metrics((run_dir / "metrics.tsv").read_text())
        final = None
        for row in metrics:
            if row["test_rate_with_language"] is not None:
                final = row
        rows.append(
            {
                "run": run_dir.name,
                "mode": config["mode"],
                "seed": config["seed"],
                "iterations": config["iterations"],
                "with_language": final["test_rate_with_language"] if final else None,
                "without_language": final["test_rate_without_language"] if final else None,
                "library_size": metrics[-1]["library_size"] if metrics else 0,
            }
        )

    header = ["run", "mode", "seed", "iterations", "with_language", "without_language", "library_size"]
    lines = ["\t".join(header)]
    for r in rows:
        lines.append("\t".join("" if r[c] is None else repr(r[c]) if not isinstance(r[c], str) else r[c] for c in header))
    tsv = "\n".join(lines) + "\n"

    by_mode: dict[str, list] = {}
    for r in rows:
        if r["with_language"] is not None:
            by_mode.setdefault(r["mode"], []).append(r)
    table = ["mode                          runs  best%lang  mean%lang  best%nolang  mean%nolang"]
    for mode in sorted(by_mode):
        group = by_mode[mode]
        wl = [r["with_language"] for r in group]
        nl = [r["without_language"] for r in group]
        table.append(
            f"{mode:<28}  {len(group):>4}  {max(wl)*100:>8.2f}  {sum(wl)/len(wl)*100:>8.2f}"
            f"  {max(nl)*100:>10.2f}  {sum(nl)/len(nl)*100:>10.2f}"
        )
    text = tsv + "\n" + "\n".join(table) + "\n"
    if out_path is not None:
        Path(out_path).write_text(text)
    return text
