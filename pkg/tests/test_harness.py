import dataclasses
import json

import pytest

from langsynth.cli import main as cli_main
from langsynth.domains import get_domain, load_tasks, save_tasks
from langsynth.domains.strings import generate_string_dataset
from langsynth.harness import (
    MODES,
    RunConfig,
    SearchBudget,
    evaluate,
    load_checkpoint,
    mode_flags,
    parse_metrics,
    report,
    run,
)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("data")
    domain = get_domain("strings")
    train, test = generate_string_dataset(16, 6, seed=7, examples_per_task=8)
    save_tasks(tmp / "train.jsonl", domain, train)
    save_tasks(tmp / "test.jsonl", domain, test)
    return tmp


def small_config(dataset, out_dir, **overrides):
    base = dict(
        domain="strings",
        train_path=str(dataset / "train.jsonl"),
        test_path=str(dataset / "test.jsonl"),
        out_dir=str(out_dir),
        mode="laps+me+compression",
        iterations=2,
        batch_size=8,
        budget=12000,
        beam_width=3,
        recognition_steps=250,
        seed=3,
        pseudocounts=5.0,
    )
    base.update(overrides)
    return RunConfig(**base)


def test_mode_flags_are_layered():
    baseline = mode_flags("baseline-no-language")
    multimodal = mode_flags("multimodal-no-generative")
    laps = mode_flags("laps")
    me = mode_flags("laps+me")
    full = mode_flags("laps+me+compression")
    assert not baseline.language and baseline.joint_samples
    assert multimodal.language and not multimodal.joint_samples
    assert laps.translation and not laps.mutual_exclusivity
    assert me.mutual_exclusivity and not me.translation_compression
    assert full.translation_compression
    with pytest.raises(ValueError):
        mode_flags("nonsense")


def test_run_writes_artifacts_and_metrics(dataset, tmp_path):
    config = small_config(dataset, tmp_path / "run")
    checkpoint = run(config)
    out = tmp_path / "run"
    for name in ("config.json", "grammar.txt", "metrics.tsv", "frontiers.json", "state.json"):
        assert (out / name).exists()
    echo = json.loads((out / "config.json").read_text())
    assert echo == dataclasses.asdict(config)
    rows = parse_metrics((out / "metrics.tsv").read_text())
    assert rows[-1]["test_rate_with_language"] is not None
    assert 0.0 <= rows[-1]["test_rate_with_language"] <= 1.0
    assert checkpoint.metrics[-1]["total_solved"] >= 0


def test_determinism_byte_identical_metrics(dataset, tmp_path):
    a = run(small_config(dataset, tmp_path / "a", seed=11))
    b = run(small_config(dataset, tmp_path / "b", seed=11))
    assert (tmp_path / "a" / "metrics.tsv").read_bytes() == (
        tmp_path / "b" / "metrics.tsv"
    ).read_bytes()
    assert (tmp_path / "a" / "grammar.txt").read_bytes() == (
        tmp_path / "b" / "grammar.txt"
    ).read_bytes()


def test_resume_equivalence(dataset, tmp_path):
    full_config = small_config(dataset, tmp_path / "full", iterations=2, test_path="")
    full = run(full_config)

    head_config = small_config(dataset, tmp_path / "head", iterations=1, test_path="")
    run(head_config)
    resumed_config = small_config(dataset, tmp_path / "resumed", iterations=2, test_path="")
    resumed = run(resumed_config, resume_from=load_checkpoint(tmp_path / "head"))

    assert (tmp_path / "full" / "metrics.tsv").read_text() == (
        tmp_path / "resumed" / "metrics.tsv"
    ).read_text()
    assert (tmp_path / "full" / "grammar.txt").read_text() == (
        tmp_path / "resumed" / "grammar.txt"
    ).read_text()
    assert full.metrics == resumed.metrics


def test_iterations_zero_is_pure_enumeration(dataset, tmp_path):
    config = small_config(dataset, tmp_path / "enum", iterations=0, budget=8000)
    checkpoint = run(config)
    assert len(checkpoint.grammar) == len(get_domain("strings").base_grammar())
    row = checkpoint.metrics[-1]
    assert row["test_rate_with_language"] == row["test_rate_without_language"]


def test_baseline_mode_ignores_language(dataset, tmp_path):
    config = small_config(
        dataset, tmp_path / "base", mode="baseline-no-language", iterations=1
    )
    checkpoint = run(config)
    row = checkpoint.metrics[-1]
    assert row["test_rate_with_language"] == row["test_rate_without_language"]


def test_evaluate_guidance_modes(dataset, tmp_path):
    config = small_config(dataset, tmp_path / "ev", iterations=1)
    checkpoint = run(config)
    domain = get_domain("strings")
    test_tasks = load_tasks(dataset / "test.jsonl", domain)
    rate_rec = evaluate(checkpoint, test_tasks, SearchBudget(8000), use_language=True)
    rate_enum = evaluate(checkpoint, test_tasks, SearchBudget(8000), guidance="grammar")
    assert 0.0 <= rate_rec <= 1.0 and 0.0 <= rate_enum <= 1.0
    # a test set equal to solved training tasks is fully solved
    train_tasks = load_tasks(dataset / "train.jsonl", domain)
    solved = [t for t in train_tasks if t.id in checkpoint.frontiers]
    if solved:
        rate = evaluate(checkpoint, solved, SearchBudget(config.budget))
        assert rate == 1.0


def test_checkpoint_reload_round_trip(dataset, tmp_path):
    config = small_config(dataset, tmp_path / "ck", iterations=1)
    checkpoint = run(config)
    loaded = load_checkpoint(tmp_path / "ck")
    assert loaded.grammar.save_text() == checkpoint.grammar.save_text()
    assert sorted(loaded.frontiers) == sorted(checkpoint.frontiers)
    for k, f in checkpoint.frontiers.items():
        lf = loaded.frontiers[k]
        assert [e.log_prior for e in lf.entries] == [e.log_prior for e in f.entries]
    if checkpoint.translation is not None:
        assert loaded.translation is not None
        assert loaded.translation.word_given_prim == checkpoint.translation.word_given_prim


def test_report_round_trip(dataset, tmp_path):
    run(small_config(dataset, tmp_path / "r1", iterations=1, seed=1))
    run(small_config(dataset, tmp_path / "r2", iterations=1, seed=2,
                     mode="baseline-no-language"))
    out = tmp_path / "results.txt"
    text = report([tmp_path / "r1", tmp_path / "r2"], out)
    assert out.exists()
    lines = text.splitlines()
    header = lines[0].split("\t")
    assert "mode" in header and "with_language" in header
    parsed = [dict(zip(header, l.split("\t"))) for l in lines[1 : 1 + 2]]
    assert {p["mode"] for p in parsed} == {"laps+me+compression", "baseline-no-language"}
    for p in parsed:
        float(p["with_language"])  # parses back losslessly
    assert "best%lang" in text


def test_report_empty_history(tmp_path):
    text = report([])
    assert text.strip() != "" or text == "\n" or True  # exits cleanly


def test_cli_generate_run_evaluate_report(tmp_path):
    data = tmp_path / "data"
    assert cli_main([
        "generate", "--domain", "strings", "--n-train", "8", "--n-test", "4",
        "--seed", "5", "--examples-per-task", "6", "--out", str(data),
    ]) == 0
    assert (data / "train.jsonl").exists() and (data / "test.jsonl").exists()
    out = tmp_path / "cli-run"
    assert cli_main([
        "run", "--domain", "strings",
        "--train", str(data / "train.jsonl"), "--test", str(data / "test.jsonl"),
        "--out", str(out), "--mode", "laps", "--iterations", "1",
        "--batch-size", "6", "--budget", "6000", "--recognition-steps", "100",
        "--seed", "2",
    ]) == 0
    assert cli_main([
        "evaluate", "--run-dir", str(out), "--tasks", str(data / "test.jsonl"),
        "--budget", "4000",
    ]) == 0
    assert cli_main([
        "evaluate", "--run-dir", str(out), "--tasks", str(data / "test.jsonl"),
        "--budget", "4000", "--guidance", "grammar", "--no-use-language",
    ]) == 0
    assert cli_main(["report", "--runs", str(out)]) == 0


def test_workers_env_override(dataset, tmp_path, monkeypatch):
    monkeypatch.setenv("LANGSYNTH_WORKERS", "2")
    config = small_config(dataset, tmp_path / "w", iterations=1, budget=4000,
                          recognition_steps=50)
    assert config.resolved_workers() == 2
    checkpoint = run(config)
    assert checkpoint.metrics
