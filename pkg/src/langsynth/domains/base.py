"""Shared task structures and the dataset file format.

A dataset is one JSON record per line: id, split, request type,
domain-encoded example pairs, an optional list of tokenized
descriptions, and an optional ground-truth program in canonical
s-expression form.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from ..grammar import Grammar
from ..interpreter import EvalLimit
from ..terms import Term, parse_term, print_term
from ..types import Type, parse_type


@dataclass
class Task:
    id: str
    request: Type
    examples: list[tuple[Any, Any]]
    description: list[str] | None = None
    split: str = "train"

    def __post_init__(self):
        if not self.examples:
            raise ValueError(f"task {self.id} has no examples")


@dataclass
class GeneratedTask:
    task: Task
    program: Term
    descriptions: list[list[str]] = field(default_factory=list)


class Domain:
    """A domain bundles primitive semantics, task generation, value
    encoding, and task features. Instances are stateless singletons."""

    name: str = "abstract"
    eval_limit: EvalLimit = EvalLimit()
    sample_examples: int = 5

    def sample_output_value(self, value):
        """Convert an execution result into a storable example output for
        joint-model samples, or None to discard the draw."""
        return value

    @property
    def request_type(self) -> Type:
        raise NotImplementedError

    @property
    def literal_names(self) -> frozenset[str]:
        raise NotImplementedError

    def base_productions(self):
        raise NotImplementedError

    def base_grammar(self) -> Grammar:
        return Grammar.uniform(self.base_productions())

    # Executor interface
    def arity(self, name: str) -> int:
        raise NotImplementedError

    def apply_primitive(self, name, args, call):
        raise NotImplementedError

    def literal_value(self, name: str):
        raise NotImplementedError

    # Task plumbing
    def prepare_input(self, stored):
        return stored

    def output_equal(self, result, expected) -> bool:
        raise NotImplementedError

    def sample_input(self, rng):
        raise NotImplementedError

    def task_features(self, task: Task):
        raise NotImplementedError

    @property
    def feature_dim(self) -> int:
        raise NotImplementedError

    def encode_value(self, value, role: str):
        return value

    def decode_value(self, encoded, role: str):
        return encoded

    def generate_tasks(self, n: int, seed: int, **kwargs) -> list[GeneratedTask]:
        raise NotImplementedError


def save_tasks(path: str | Path, domain: Domain, generated: Iterable[GeneratedTask]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for g in generated:
            t = g.task
            record = {
                "id": t.id,
                "split": t.split,
                "request": str(t.request),
                "examples": [
                    [domain.encode_value(x, "input"), domain.encode_value(y, "output")]
                    for x, y in t.examples
                ],
                "descriptions": g.descriptions if g.descriptions else None,
                "program": print_term(g.program) if g.program is not None else None,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_tasks(
    path: str | Path,
    domain: Domain,
    split: str | None = None,
    description_index: int = 0,
) -> list[Task]:
    tasks = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        if split is not None and record["split"] != split:
            continue
        descriptions = record.get("descriptions")
        description = None
        if descriptions:
            description = descriptions[min(description_index, len(descriptions) - 1)]
        tasks.append(
            Task(
                id=record["id"],
                request=parse_type(record["request"]),
                examples=[
                    (domain.decode_value(x, "input"), domain.decode_value(y, "output"))
                    for x, y in record["examples"]
                ],
                description=description,
                split=record["split"],
            )
        )
    return tasks


def load_ground_truth(path: str | Path, domain: Domain) -> dict[str, Term]:
    """Ground-truth programs keyed by task id, when the file records them."""
    out: dict[str, Term] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        if record.get("program"):
            out[record["id"]] = parse_term(record["program"], literals=domain.literal_names)
    return out
