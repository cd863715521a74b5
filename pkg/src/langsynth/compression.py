"""Abstraction learning by joint description-length compression.

Candidates come from shared structure across frontier programs: exact
repeated subtrees, and anti-unifications of subtree pairs in which each
disagreement position becomes a λ-bound argument slot. A candidate is
scored by the change in total description length it buys: program
description length under refit weights, plus the library's own weighted
size, plus (optionally) the translation model's alignment description
length recomputed under the subcomponent rule. Acceptance is a greedy
loop that rewrites the frontiers, refits, and re-proposes until nothing
improves or the per-iteration cap is reached.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .grammar import (
    CompressionParams,
    Grammar,
    IllTypedProgram,
    SummaryMatrix,
    eta_expand,
    grammar_description_length,
)
from .search import Frontier, FrontierEntry
from .terms import (
    Abstraction,
    Application,
    Invented,
    Literal,
    Primitive,
    Term,
    Var,
    beta_reduce,
    is_closed,
    make_application,
    print_term,
    size,
    subterms,
    subcomponent_names,
)
from .translation import (
    TranslationTable,
    refactored_description_length,
    translation_description_length,
)


@dataclass
class Candidate:
    body: Term                      # λ^arity-wrapped shared structure
    arity: int
    usage_sites: list[tuple[str, int, tuple]] = field(default_factory=list)

    @property
    def core(self) -> Term:
        t = self.body
        for _ in range(self.arity):
            t = t.body
        return t

    def distinct_entries(self) -> int:
        return len({(t, e) for t, e, _ in self.usage_sites})

    def gain_estimate(self) -> float:
        return (self.distinct_entries() - 1) * max(1, size(self.body) - self.arity - 1)


@dataclass
class CompressionResult:
    grammar: Grammar
    frontiers: list[Frontier]
    objective_before: float
    objective_after: float
    accepted: list[Candidate]

    def report(self) -> str:
        lines = [
            "compression-report",
            f"objective_before\t{self.objective_before!r}",
            f"objective_after\t{self.objective_after!r}",
            f"accepted\t{len(self.accepted)}",
        ]
        for c in self.accepted:
            lines.append(f"abstraction\t{c.arity}\t{print_term(c.body)}")
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# Anti-unification
# ----------------------------------------------------------------------

class _AntiUnifyFailure(Exception):
    pass


def anti_unify(t1: Term, t2: Term, max_arity: int) -> Candidate | None:
    """Most specific generalization of two terms: shared structure with
    each disagreeing pair of closed subtrees replaced by one argument
    slot. Returns None when the result needs more than max_arity slots,
    is itself open, or degenerates to a bare slot."""
    slots: dict[tuple[Term, Term], int] = {}

    def walk(a: Term, b: Term, depth: int) -> Term:
        if a == b and type(a) is type(b):
            return a
        ka, kb = type(a), type(b)
        if ka is Application and kb is Application:
            return Application(walk(a.fn, b.fn, depth), walk(a.arg, b.arg, depth))
        if ka is Abstraction and kb is Abstraction:
            return Abstraction(walk(a.body, b.body, depth + 1))
        if not is_closed(a) or not is_closed(b):
            raise _AntiUnifyFailure()
        slot = slots.setdefault((a, b), len(slots))
        if len(slots) > max_arity:
            raise _AntiUnifyFailure()
        return _Slot(slot, depth)

    try:
        merged = walk(t1, t2, 0)
    except _AntiUnifyFailure:
        return None
    arity = len(slots)
    if arity == 0:
        return None
    core = _resolve_slots(merged, arity, 0)
    if type(core) is Var:
        return None
    body = core
    for _ in range(arity):
        body = Abstraction(body)
    if not is_closed(body):
        return None
    if size(body) - arity < 2:
        return None
    return Candidate(body, arity)


class _Slot(Term):
    __slots__ = ("slot", "depth")

    def __init__(self, slot: int, depth: int):
        object.__setattr__(self, "slot", slot)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "_hash", hash(("slot", slot, depth)))

    def __eq__(self, other):
        return (
            type(other) is _Slot and other.slot == self.slot and other.depth == self.depth
        )

    __hash__ = Term.__hash__


def _resolve_slots(t: Term, arity: int, depth: int) -> Term:
    kind = type(t)
    if kind is _Slot:
        return Var(depth + arity - 1 - t.slot)
    if kind is Application:
        return Application(
            _resolve_slots(t.fn, arity, depth), _resolve_slots(t.arg, arity, depth)
        )
    if kind is Abstraction:
        return Abstraction(_resolve_slots(t.body, arity, depth + 1))
    return t


# ----------------------------------------------------------------------
# Matching and rewriting
# ----------------------------------------------------------------------

def match_site(candidate: Candidate, term: Term) -> list[Term] | None:
    """Argument bindings that make the candidate β-reduce to this term,
    or None."""
    args: list[Term | None] = [None] * candidate.arity
    arity = candidate.arity

    def walk(pattern: Term, target: Term, depth: int) -> bool:
        kp = type(pattern)
        if kp is Var:
            i = pattern.index
            if i >= depth:
                slot = arity - 1 - (i - depth)
                if slot < 0:
                    return False
                bound = args[slot]
                if bound is None:
                    if not is_closed(target):
                        return False
                    args[slot] = target
                    return True
                return bound == target
            return type(target) is Var and target.index == i
        kt = type(target)
        if kp is Application:
            return (
                kt is Application
                and walk(pattern.fn, target.fn, depth)
                and walk(pattern.arg, target.arg, depth)
            )
        if kp is Abstraction:
            return kt is Abstraction and walk(pattern.body, target.body, depth + 1)
        return kp is kt and pattern == target

    if not walk(candidate.core, term, 0):
        return None
    if any(a is None for a in args):
        return None
    return args  # type: ignore[return-value]


def _rewrite_term(term: Term, candidate: Candidate, node: Term) -> tuple[Term, int]:
    """Replace every maximal matching site with (node arg...); returns
    the rewritten term and the number of sites replaced."""

    def walk(t: Term) -> tuple[Term, int]:
        args = match_site(candidate, t)
        if args is not None:
            return make_application(node, args), 1
        kind = type(t)
        if kind is Application:
            fn, a = walk(t.fn)
            arg, b = walk(t.arg)
            return (Application(fn, arg) if a or b else t), a + b
        if kind is Abstraction:
            body, a = walk(t.body)
            return (Abstraction(body) if a else t), a
        return t, 0

    return walk(term)


def rewrite(
    program: Term,
    candidate: Candidate,
    node: Term | None = None,
    grammar: Grammar | None = None,
    request=None,
) -> Term:
    """Spec surface: rewrite one program with a candidate abstraction.

    When a grammar and request type are supplied the result is η-expanded
    and type-checked, falling back to the original program if the rewrite
    does not type-check (sites skipped)."""
    if node is None:
        node = Invented("candidate", candidate.body)
    rewritten, hits = _rewrite_term(program, candidate, node)
    if hits == 0:
        return program
    if grammar is not None and request is not None:
        try:
            return eta_expand(rewritten, request, grammar)
        except (IllTypedProgram, KeyError):
            return program
    return rewritten


# ----------------------------------------------------------------------
# Proposal
# ----------------------------------------------------------------------

def propose(frontiers, params: CompressionParams, reps_per_bucket: int = 40) -> list[Candidate]:
    """Candidate abstractions from shared structure across frontiers.

    Exact repeated closed subtrees give arity-0 candidates; pairwise
    anti-unification (iterated refactor_depth times over the growing
    pool) gives slotted candidates. Only candidates supported by at
    least two distinct frontier entries survive. Deduplicated by
    α-equivalence, which is structural equality here.
    """
    occurrences: dict[Term, list[tuple[str, int, tuple]]] = {}
    order: list[Term] = []
    for f in frontiers:
        for ei, entry in enumerate(f.entries):
            for path, sub, _ in subterms(entry.program):
                kind = type(sub)
                if kind is not Application and kind is not Abstraction:
                    continue
                if size(sub) < 2 or not is_closed(sub):
                    continue
                if sub not in occurrences:
                    occurrences[sub] = []
                    order.append(sub)
                occurrences[sub].append((f.task_id, ei, path))

    candidates: dict[Term, Candidate] = {}

    def add(c: Candidate, sites) -> None:
        existing = candidates.get(c.body)
        if existing is None:
            c.usage_sites = list(sites)
            candidates[c.body] = c
        else:
            existing.usage_sites.extend(sites)

    for sub in order:
        sites = occurrences[sub]
        if len({(t, e) for t, e, _ in sites}) >= 2:
            add(Candidate(sub, 0), sites)

    buckets: dict[tuple, list[Term]] = {}
    for sub in order:
        head = sub
        while type(head) is Application:
            head = head.fn
        key = (type(head).__name__, getattr(head, "name", ""))
        bucket = buckets.setdefault(key, [])
        if len(bucket) < reps_per_bucket:
            bucket.append(sub)

    # Anti-unify within same-head buckets; later rounds generalize the
    # fresh results of the previous round against each other.
    pools: dict[tuple, list[tuple[Term, list]]] = {
        key: [(sub, occurrences[sub]) for sub in bucket]
        for key, bucket in buckets.items()
    }
    seen_bodies = {sub for bucket in buckets.values() for sub in bucket}
    for _ in range(max(1, params.refactor_depth)):
        fresh: dict[tuple, list[tuple[Term, list]]] = {}
        for key, pool in pools.items():
            n = len(pool)
            for i in range(n):
                for j in range(i + 1, n):
                    t1, s1 = pool[i]
                    t2, s2 = pool[j]
                    c = anti_unify(t1, t2, params.max_arity)
                    if c is None:
                        continue
                    sites = s1 + s2
                    if len({(t, e) for t, e, _ in sites}) < 2:
                        continue
                    add(c, sites)
                    if c.body not in seen_bodies:
                        seen_bodies.add(c.body)
                        fresh.setdefault(key, []).append((c.body, sites))
        if not fresh:
            break
        pools = {k: v[:reps_per_bucket] for k, v in fresh.items()}

    out = list(candidates.values())
    for c in out:
        dedup = {}
        for site in c.usage_sites:
            dedup.setdefault(site, None)
        c.usage_sites = list(dedup)
    out.sort(key=lambda c: (-c.gain_estimate(), print_term(c.body)))
    return out


# ----------------------------------------------------------------------
# Scoring and the greedy loop
# ----------------------------------------------------------------------

def _rewrite_frontiers(frontiers, candidate, node, grammar):
    out = []
    total_hits = 0
    for f in frontiers:
        entries = []
        for e in f.entries:
            rewritten, hits = _rewrite_term(e.program, candidate, node)
            if hits:
                try:
                    rewritten = eta_expand(rewritten, f.request, grammar)
                    total_hits += hits
                except (IllTypedProgram, KeyError):
                    rewritten = e.program
            entries.append(FrontierEntry(rewritten, e.log_prior, e.log_posterior))
        out.append(Frontier(f.task_id, f.request, entries, f.beam_width))
    return out, total_hits


def _objective(
    grammar: Grammar,
    frontiers,
    translation: TranslationTable | None,
    params: CompressionParams,
    translation_dl: float | None = None,
) -> tuple[float, Grammar]:
    """Joint negative objective (lower is better) after refitting weights."""
    import numpy as np

    matrix = SummaryMatrix(grammar, frontiers)
    theta0 = np.array(
        [p.log_weight for p in grammar.productions] + [grammar.variable_log_weight]
    )
    if matrix.n_rows:
        theta = matrix.em(theta0, params.pseudocounts, max_iterations=30, tolerance=1e-7)
        program_dl = -matrix.data_log_likelihood(theta)
        n = len(grammar.productions)
        fitted = grammar.with_weights([float(t) for t in theta[:n]], float(theta[n]))
    else:
        program_dl = 0.0
        fitted = grammar
    total = float(program_dl)
    total += grammar_description_length(grammar, params.structure_penalty)
    total += len(grammar.productions)
    if translation is not None and params.translation_weight > 0:
        if translation_dl is None:
            translation_dl = translation_description_length(translation)
        total += params.translation_weight * translation_dl
    return total, fitted


def score(
    candidate: Candidate,
    frontiers,
    grammar: Grammar,
    translation: TranslationTable | None,
    params: CompressionParams,
    name: str = "candidate",
) -> float:
    """Joint negative objective if this candidate were adopted; lower is
    better. Infinite when the candidate cannot join the library."""
    value, _, _ = _score_full(candidate, frontiers, grammar, translation, params, name)
    return value


def _score_full(candidate, frontiers, grammar, translation, params, name):
    try:
        scheme = grammar.infer_type(candidate.body)
    except IllTypedProgram:
        return math.inf, None, None
    if name in grammar.by_name:
        return math.inf, None, None
    for p in grammar.productions:
        if p.is_invented and p.term.body == candidate.body:
            return math.inf, None, None
    g2 = grammar.add_invented(name, candidate.body, scheme)
    node = g2.production_named(name).term
    rewritten, hits = _rewrite_frontiers(frontiers, candidate, node, g2)
    if hits == 0:
        return math.inf, None, None
    translation_dl = None
    if translation is not None and params.translation_weight > 0:
        translation_dl = refactored_description_length(
            translation, subcomponent_names(candidate.body)
        )
    try:
        value, fitted = _objective(g2, rewritten, translation, params, translation_dl)
    except IllTypedProgram:
        return math.inf, None, None
    return value, fitted, rewritten


def compress(
    frontiers,
    grammar: Grammar,
    translation: TranslationTable | None,
    params: CompressionParams,
    max_candidates: int = 60,
) -> CompressionResult:
    """Greedy abstraction loop: accept the best strictly-improving
    candidate, rewrite and refit, re-propose, until no candidate helps or
    the per-iteration cap is hit."""
    frontiers = list(frontiers)
    objective_before, fitted = _objective(grammar, frontiers, translation, params)
    grammar = fitted
    current = objective_before
    accepted: list[Candidate] = []

    while len(accepted) < params.max_new_abstractions:
        proposals = propose(frontiers, params)
        proposals = [c for c in proposals if c.gain_estimate() > 0][:max_candidates]
        if not proposals:
            break
        best = None
        invented_so_far = sum(1 for p in grammar.productions if p.is_invented)
        name = f"fn_{invented_so_far}"
        for c in proposals:
            value, fitted, rewritten = _score_full(
                c, frontiers, grammar, translation, params, name
            )
            if value < current - 1e-9 and (best is None or value < best[0] - 1e-12):
                best = (value, c, fitted, rewritten)
        if best is None:
            break
        value, c, fitted, rewritten = best
        grammar = fitted
        matrix_priors = [
            [grammar.log_prior(e.program, f.request) for e in f.entries]
            for f in rewritten
        ]
        frontiers = [
            Frontier(
                f.task_id,
                f.request,
                [
                    FrontierEntry(e.program, lp, lp)
                    for e, lp in zip(f.entries, lps)
                ],
                f.beam_width,
            )
            for f, lps in zip(rewritten, matrix_priors)
        ]
        accepted.append(c)
        current = value

    return CompressionResult(grammar, frontiers, objective_before, current, accepted)
