"""Enumeration of typed programs in probability order, and task solving.

Programs are emitted in non-increasing log-probability order under the
supplied distribution (grammar prior or a conditional reweighting), with
ties broken by canonical print. The enumerator runs iterative deepening
over probability buckets: a depth-first pass collects every complete
program whose score falls inside the current bucket, the bucket is
sorted, emitted, and the bound is lowered. Bucketed collection plus an
in-bucket sort reproduces exactly the sequence a best-first search would
produce while keeping per-node cost and memory low.

The budget is a deterministic count of derivation-node visits, so
searches reproduce across machines; an optional wall-clock cap can be
layered on top for interactive use.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator

from .grammar import Grammar, ROOT_SLOT
from .interpreter import EvalError, EvalLimit, evaluate
from .terms import Abstraction, Term, Var, make_application, print_term
from .types import TArrow, TypeContext, Type, canonicalize

BUCKET_WIDTH = 1.5
_LAMBDA_OP = "L"


@dataclass(frozen=True)
class SearchBudget:
    max_expansions: int
    max_seconds: float | None = None

    def __post_init__(self):
        if self.max_expansions <= 0:
            raise ValueError("max_expansions must be positive")


@dataclass(frozen=True)
class FrontierEntry:
    program: Term
    log_prior: float
    log_posterior: float


@dataclass
class Frontier:
    task_id: str
    request: Type
    entries: list[FrontierEntry] = field(default_factory=list)
    beam_width: int = 5

    def __post_init__(self):
        self.entries = sorted(
            self.entries, key=lambda e: (-e.log_posterior, print_term(e.program))
        )[: self.beam_width]

    @property
    def empty(self) -> bool:
        return not self.entries

    def best(self) -> FrontierEntry:
        return self.entries[0]

    def merged_with(self, other: "Frontier") -> "Frontier":
        seen = {}
        for e in self.entries + other.entries:
            seen.setdefault(print_term(e.program), e)
        return Frontier(self.task_id, self.request, list(seen.values()), self.beam_width)


class _OutOfBudget(Exception):
    pass


def _rebuild(ops: tuple) -> Term:
    it = iter(ops)

    def build() -> Term:
        op = next(it)
        if op is _LAMBDA_OP:
            return Abstraction(build())
        node, n_args = op
        args = [build() for _ in range(n_args)]
        return make_application(node, args)

    return build()


class _BucketSearch:
    """One depth-first pass collecting programs scored inside [lower, upper)."""

    __slots__ = (
        "dist", "lower", "upper", "results", "counter", "pruned", "deadline", "ops"
    )

    def __init__(self, dist, lower, upper, counter, deadline):
        self.dist = dist
        self.lower = lower
        self.upper = upper
        self.counter = counter
        self.deadline = deadline
        self.results: list[tuple[float, tuple]] = []
        self.pruned = False
        self.ops: list = []

    def run(self, holes, ctx, logp):
        counter = self.counter
        counter[0] -= 1
        if counter[0] < 0:
            raise _OutOfBudget()
        if self.deadline is not None and counter[0] % 1024 == 0:
            if time.monotonic() > self.deadline:
                raise _OutOfBudget()
        if holes is None:
            if self.lower <= logp < self.upper:
                self.results.append((logp, tuple(self.ops)))
            return
        (request, env, parent_key, slot), rest = holes
        request = ctx.walk(request)
        if type(request) is TArrow:
            ops = self.ops
            ops.append(_LAMBDA_OP)
            self.run(
                ((request.right, (request.left,) + env, parent_key, slot), rest),
                ctx,
                logp,
            )
            ops.pop()
            return
        choices = self.dist.expansions(request, env, ctx, parent_key, slot)
        lower = self.lower
        ops = self.ops
        run = self.run
        for node, key, lp, arg_types, new_ctx in choices:
            child_logp = logp + lp
            if child_logp < lower:
                self.pruned = True
                continue
            child_holes = rest
            for i in range(len(arg_types) - 1, -1, -1):
                child_holes = ((arg_types[i], env, key, i), child_holes)
            ops.append((node, len(arg_types)))
            run(child_holes, new_ctx if new_ctx is not None else ctx, child_logp)
            ops.pop()


def enumerate_programs(
    dist,
    request: Type,
    budget: SearchBudget,
) -> Iterator[tuple[Term, float]]:
    """Stream (program, log probability) in best-first order."""
    ctx = TypeContext()
    request = ctx.instantiate(canonicalize(request))
    root_key = dist.base_grammar.root_key
    root_holes = ((request, (), root_key, ROOT_SLOT), None)

    counter = [budget.max_expansions]
    deadline = None
    if budget.max_seconds is not None:
        deadline = time.monotonic() + budget.max_seconds

    upper = math.inf
    lower = -BUCKET_WIDTH
    while counter[0] > 0:
        search = _BucketSearch(dist, lower, upper, counter, deadline)
        exhausted = False
        try:
            search.run(root_holes, ctx, 0.0)
        except _OutOfBudget:
            exhausted = True
        emitted = [
            (-logp, print_term(term), term, logp)
            for logp, ops in search.results
            for term in (_rebuild(ops),)
        ]
        emitted.sort(key=lambda r: (r[0], r[1]))
        for _, _, term, logp in emitted:
            yield term, logp
        if exhausted or not search.pruned:
            return
        upper = lower
        lower -= BUCKET_WIDTH


def check_task(program: Term, task, domain, limit: EvalLimit | None = None) -> bool:
    """True iff the program maps every example input to its output.

    Evaluation errors count as failure and never propagate.
    """
    limit = limit if limit is not None else domain.eval_limit
    for x, y in task.examples:
        try:
            out = evaluate(program, [domain.prepare_input(x)], domain, limit)
        except EvalError:
            return False
        if not domain.output_equal(out, y):
            return False
    return True


def solve_single_task(task, dist, budget: SearchBudget, beam_width: int, domain) -> Frontier:
    grammar = dist.base_grammar
    entries = []
    for term, _ in enumerate_programs(dist, task.request, budget):
        if check_task(term, task, domain):
            lp = grammar.log_prior(term, task.request)
            entries.append(FrontierEntry(term, lp, lp))
            if len(entries) >= beam_width:
                break
    return Frontier(task.id, task.request, entries, beam_width)


def _solve_worker(payload):
    index, task, dist, budget, beam_width, domain_name = payload
    from .domains import get_domain

    domain = get_domain(domain_name)
    return index, solve_single_task(task, dist, budget, beam_width, domain)


def solve_tasks(
    tasks,
    dists,
    budget: SearchBudget,
    beam_width: int,
    domain,
    workers: int = 1,
) -> list[Frontier]:
    """Search each task under its own distribution; results are ordered
    by task index regardless of completion order."""
    if len(tasks) != len(dists):
        raise ValueError("need one distribution per task")
    if workers <= 1 or len(tasks) <= 1:
        return [
            solve_single_task(t, d, budget, beam_width, domain)
            for t, d in zip(tasks, dists)
        ]
    payloads = [
        (i, t, d, budget, beam_width, domain.name)
        for i, (t, d) in enumerate(zip(tasks, dists))
    ]
    results: list[Frontier | None] = [None] * len(tasks)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for index, frontier in pool.map(_solve_worker, payloads, chunksize=1):
            results[index] = frontier
    return results  # type: ignore[return-value]
