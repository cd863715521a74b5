"""The program library: typed productions with log-weights.

The grammar defines the generative prior over programs. A derivation
fills typed holes left to right; at each hole the legal candidates are
the productions (plus in-scope variables) whose type unifies with the
requested type, with probabilities renormalized over that candidate set.
The probability of a program is the product of its derivation's choice
probabilities, which makes the prior a description-length prior.

Candidate sets are memoized per canonicalized (request, environment)
signature; enumeration, prior scoring and weight fitting all share the
same cached computation so their floating point results agree bit for
bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .terms import (
    Abstraction,
    Application,
    Invented,
    Literal,
    Primitive,
    Term,
    Var,
    application_parse,
    make_application,
    parse_term,
    print_term,
    shift,
    size,
    subcomponent_names,
)
from .types import (
    TArrow,
    TCon,
    TVar,
    Type,
    TypeContext,
    UnificationError,
    canonicalize,
    free_type_vars,
    function_arguments,
    parse_type,
    returns,
    type_arity,
)


class GrammarError(Exception):
    pass


class IllTypedProgram(GrammarError):
    pass


@dataclass(frozen=True)
class Production:
    term: Term
    scheme: Type
    log_weight: float
    subcomponents: tuple[str, ...] = ()

    @property
    def name(self) -> str:
        return self.term.name

    @property
    def is_invented(self) -> bool:
        return type(self.term) is Invented


@dataclass(frozen=True)
class CompressionParams:
    structure_penalty: float = 1.5
    pseudocounts: float = 30.0
    max_new_abstractions: int = 5
    max_arity: int = 3
    refactor_depth: int = 2
    translation_weight: float = 1.0

    def __post_init__(self):
        if self.structure_penalty <= 0:
            raise ValueError("structure penalty must be positive")
        if self.pseudocounts <= 0:
            raise ValueError("pseudocounts must be positive")


def log_sum_exp(values: Sequence[float]) -> float:
    m = max(values)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(v - m) for v in values))


@dataclass
class _TemplateEntry:
    node: Term
    key: int                      # production index, or len(productions) for a variable
    arg_types: tuple[Type, ...]   # over template variable space
    bindings: tuple[tuple[int, Type], ...]   # canonical var id -> template type
    fresh_ids: tuple[int, ...]    # template var ids needing caller-fresh allocation
    ground: bool = False          # no bindings, no fresh vars, arg types variable-free
    prior_logp: float = 0.0


@dataclass
class _Template:
    entries: list[_TemplateEntry]
    n_canonical: int
    n_vars: int
    static: list | None = None    # prebuilt choice tuples when every entry is ground


# A choice is the tuple (node, key, log_prob, arg_types, ctx); ctx is None
# when filling the hole leaves the caller's unification context unchanged.
Choice = tuple


@dataclass
class DerivationStep:
    parent_key: int
    slot: int
    legal_keys: tuple[int, ...]
    chosen_key: int
    chosen_logp: float
    n_vars: int
    var_chosen: bool


ROOT_SLOT = 0


class Grammar:
    """An immutable snapshot of the library (productions + weights)."""

    def __init__(
        self,
        productions: Sequence[Production],
        variable_log_weight: float = 0.0,
        version: int = 0,
    ):
        # Name-sorted order keeps production indices stable across
        # save/load round trips, which checkpoint resume relies on.
        self.productions = tuple(sorted(productions, key=lambda p: p.name))
        self.variable_log_weight = variable_log_weight
        self.version = version
        self.by_name = {p.name: i for i, p in enumerate(self.productions)}
        if len(self.by_name) != len(self.productions):
            raise GrammarError("duplicate production names")
        self._template_cache: dict[str, _Template] = {}

    # The grammar itself serves as the distribution for prior-guided search.
    @property
    def base_grammar(self) -> "Grammar":
        return self

    def __len__(self) -> int:
        return len(self.productions)

    @property
    def var_key(self) -> int:
        return len(self.productions)

    @property
    def root_key(self) -> int:
        return len(self.productions)

    @property
    def max_arity(self) -> int:
        return max(1, max((type_arity(p.scheme) for p in self.productions), default=1))

    def arity_of(self, name: str) -> int:
        return type_arity(self.productions[self.by_name[name]].scheme)

    def production_named(self, name: str) -> Production:
        return self.productions[self.by_name[name]]

    @property
    def invented(self) -> dict[str, Term]:
        return {p.name: p.term for p in self.productions if p.is_invented}

    @property
    def literal_names(self) -> frozenset[str]:
        return frozenset(p.name for p in self.productions if type(p.term) is Literal)

    @classmethod
    def uniform(
        cls,
        primitives: Iterable[tuple[Term, Type]],
        variable_log_weight: float = 0.0,
        version: int = 0,
    ) -> "Grammar":
        prods = [
            Production(term, canonicalize(scheme), 0.0, subcomponent_names(term))
            for term, scheme in primitives
        ]
        return cls(prods, variable_log_weight, version)

    def with_weights(self, weights: Sequence[float], variable_log_weight: float) -> "Grammar":
        prods = [replace(p, log_weight=w) for p, w in zip(self.productions, weights)]
        return Grammar(prods, variable_log_weight, self.version + 1)

    def add_invented(self, name: str, body: Term, scheme: Type) -> "Grammar":
        node = Invented(name, body)
        prod = Production(node, canonicalize(scheme), 0.0, subcomponent_names(body))
        return Grammar(self.productions + (prod,), self.variable_log_weight, self.version + 1)

    # ------------------------------------------------------------------
    # Candidate computation
    # ------------------------------------------------------------------

    def _signature(self, ctx: TypeContext, request: Type, env: tuple[Type, ...]):
        """Canonical string for (request, env) under ctx, plus the actual
        variable index for each canonical id (in canonical order)."""
        order: list[int] = []
        parts: list[str] = []
        walk = ctx.walk

        def emit(t: Type) -> None:
            g = t.ground_sig
            if g is not None:
                parts.append(g)
                return
            t = walk(t)
            k = type(t)
            if k is TVar:
                try:
                    cid = order.index(t.index)
                except ValueError:
                    cid = len(order)
                    order.append(t.index)
                parts.append(f"?{cid}")
            elif k is TArrow:
                g = t.ground_sig
                if g is not None:
                    parts.append(g)
                    return
                parts.append("(")
                emit(t.left)
                parts.append(">")
                emit(t.right)
                parts.append(")")
            else:
                g = t.ground_sig
                if g is not None:
                    parts.append(g)
                    return
                parts.append(t.name)
                parts.append("[")
                for a in t.args:
                    emit(a)
                    parts.append(",")
                parts.append("]")

        emit(request)
        for e in env:
            parts.append("|")
            emit(e)
        return "".join(parts), order

    def _canonical_type(self, ctx: TypeContext, t: Type, mapping: dict[int, int]) -> Type:
        t = ctx.walk(t)
        k = type(t)
        if k is TVar:
            return TVar(mapping[t.index])
        if k is TArrow:
            return TArrow(
                self._canonical_type(ctx, t.left, mapping),
                self._canonical_type(ctx, t.right, mapping),
            )
        if t.args:
            return TCon(t.name, tuple(self._canonical_type(ctx, a, mapping) for a in t.args))
        return t

    def _build_template(self, ctx: TypeContext, request: Type, env: tuple[Type, ...], order: list[int]) -> _Template:
        mapping = {actual: cid for cid, actual in enumerate(order)}
        m = len(order)
        canon_request = self._canonical_type(ctx, request, mapping)
        canon_env = [self._canonical_type(ctx, e, mapping) for e in env]

        entries: list[_TemplateEntry] = []
        prod_weights: list[float] = []
        var_entries: list[_TemplateEntry] = []

        def finish(local: TypeContext, node: Term, key: int, inst: Type) -> _TemplateEntry:
            arg_types = tuple(local.apply(a) for a in function_arguments(inst))
            bindings = tuple(
                (cid, local.apply(TVar(cid))) for cid in range(m) if cid in local.subst
            )
            seen: set[int] = set()
            any_vars = False
            for t in list(arg_types) + [b for _, b in bindings]:
                for v in free_type_vars(t):
                    any_vars = True
                    if v >= m:
                        seen.add(v)
            ground = not bindings and not seen and not any_vars
            return _TemplateEntry(node, key, arg_types, bindings, tuple(sorted(seen)), ground)

        for idx, prod in enumerate(self.productions):
            local = TypeContext(m)
            inst = local.instantiate(prod.scheme)
            try:
                local.unify(returns(inst), canon_request)
            except UnificationError:
                continue
            inst = local.apply(inst)
            entries.append(finish(local, prod.term, idx, inst))
            prod_weights.append(prod.log_weight)

        for j, etype in enumerate(canon_env):
            local = TypeContext(m)
            try:
                local.unify(returns(etype), canon_request)
            except UnificationError:
                continue
            var_entries.append(finish(local, Var(j), self.var_key, local.apply(etype)))

        n_vars = len(var_entries)
        all_weights = list(prod_weights)
        if n_vars:
            all_weights.append(self.variable_log_weight)
        if all_weights:
            z = log_sum_exp(all_weights)
            for entry, w in zip(entries, prod_weights):
                entry.prior_logp = w - z
            if n_vars:
                var_logp = self.variable_log_weight - math.log(n_vars) - z
                for entry in var_entries:
                    entry.prior_logp = var_logp
        entries.extend(var_entries)
        static = None
        if all(e.ground for e in entries):
            static = [
                (e.node, e.key, e.prior_logp, e.arg_types, None) for e in entries
            ]
        return _Template(entries, m, n_vars, static)

    def _template(self, ctx: TypeContext, request: Type, env: tuple[Type, ...]):
        sig, order = self._signature(ctx, request, env)
        template = self._template_cache.get(sig)
        if template is None:
            template = self._build_template(ctx, request, env, order)
            self._template_cache[sig] = template
        return template, order

    @staticmethod
    def _translate(t: Type, remap: dict[int, int]) -> Type:
        k = type(t)
        if k is TVar:
            return TVar(remap[t.index])
        if k is TArrow:
            return TArrow(Grammar._translate(t.left, remap), Grammar._translate(t.right, remap))
        if t.args:
            return TCon(t.name, tuple(Grammar._translate(a, remap) for a in t.args))
        return t

    @staticmethod
    def _materialize(entry: _TemplateEntry, order: list[int], ctx: TypeContext, log_prob: float) -> Choice:
        if entry.ground:
            return (entry.node, entry.key, log_prob, entry.arg_types, None)
        remap = {cid: actual for cid, actual in enumerate(order)}
        if entry.bindings or entry.fresh_ids:
            new_ctx = ctx.copy()
            for fid in entry.fresh_ids:
                remap[fid] = new_ctx.fresh().index
            for cid, bound in entry.bindings:
                new_ctx.subst[order[cid]] = Grammar._translate(bound, remap)
        else:
            new_ctx = None
        arg_types = tuple(Grammar._translate(a, remap) for a in entry.arg_types)
        return (entry.node, entry.key, log_prob, arg_types, new_ctx)

    def expansions(
        self,
        request: Type,
        env: tuple[Type, ...],
        ctx: TypeContext,
        parent_key: int = -1,
        slot: int = 0,
    ) -> list[Choice]:
        """Legal ways to fill a hole, with prior-normalized probabilities,
        as (node, key, log_prob, arg_types, ctx_or_None) tuples. A None
        context means the caller's context is unchanged; the returned
        list may be shared and must not be mutated.

        parent_key and slot are accepted for interface parity with
        conditional distributions; the prior ignores them.
        """
        template, order = self._template(ctx, request, env)
        static = template.static
        if static is not None:
            return static
        return [
            self._materialize(entry, order, ctx, entry.prior_logp)
            for entry in template.entries
        ]

    # ------------------------------------------------------------------
    # Prior scoring
    # ------------------------------------------------------------------

    def _walk_derivation(self, dist, program: Term, request: Type):
        """Yield DerivationStep for each choice in the program's leftmost
        derivation under `dist` (any GrammarLike). Raises IllTypedProgram
        when the program does not fit the request."""
        ctx = TypeContext()
        request = ctx.instantiate(canonicalize(request))
        steps: list[DerivationStep] = []

        def walk(term: Term, req: Type, env: tuple[Type, ...], parent_key: int, slot: int, context: TypeContext) -> TypeContext:
            req = context.walk(req)
            if type(req) is TArrow:
                if type(term) is not Abstraction:
                    raise IllTypedProgram(
                        f"expected an abstraction of type {req} but found {print_term(term)}"
                    )
                return walk(term.body, req.right, (req.left,) + env, parent_key, slot, context)
            head, args = application_parse(term)
            choices = dist.expansions(req, env, context, parent_key, slot)
            chosen = None
            for c in choices:
                if c[0] == head and type(c[0]) is type(head):
                    chosen = c
                    break
            if chosen is None:
                raise IllTypedProgram(f"{print_term(head)} is not legal for request {req}")
            node, key, logp, arg_types, new_ctx = chosen
            if len(args) != len(arg_types):
                raise IllTypedProgram(
                    f"{print_term(head)} applied to {len(args)} arguments, expected {len(arg_types)}"
                )
            n_vars = sum(1 for c in choices if type(c[0]) is Var)
            steps.append(
                DerivationStep(
                    parent_key=parent_key,
                    slot=slot,
                    legal_keys=tuple(dict.fromkeys(c[1] for c in choices)),
                    chosen_key=key,
                    chosen_logp=logp,
                    n_vars=n_vars,
                    var_chosen=type(node) is Var,
                )
            )
            if new_ctx is not None:
                context = new_ctx
            for i, (arg, at) in enumerate(zip(args, arg_types)):
                context = walk(arg, at, env, key, i, context)
            return context

        walk(program, request, (), self.root_key, ROOT_SLOT, ctx)
        return steps

    def derivation_steps(self, program: Term, request: Type, dist=None) -> list[DerivationStep]:
        return self._walk_derivation(dist if dist is not None else self, program, request)

    def log_prior(self, program: Term, request: Type) -> float:
        return sum(s.chosen_logp for s in self.derivation_steps(program, request))

    def likelihood_summary(self, program: Term, request: Type) -> "LikelihoodSummary":
        uses: dict[int, float] = {}
        normalizers: dict[frozenset, float] = {}
        constant = 0.0
        for s in self.derivation_steps(program, request):
            uses[s.chosen_key] = uses.get(s.chosen_key, 0.0) + 1.0
            ns = frozenset(s.legal_keys)
            normalizers[ns] = normalizers.get(ns, 0.0) + 1.0
            if s.var_chosen:
                constant -= math.log(s.n_vars)
        return LikelihoodSummary(uses, normalizers, constant)

    def infer_type(self, program: Term) -> Type:
        ctx = TypeContext()
        t = _infer(program, (), ctx, self)
        return canonicalize(ctx.apply(t))

    # ------------------------------------------------------------------
    # Sampling
    # ------------------------------------------------------------------

    def sample(self, request: Type, rng, max_depth: int = 12, max_attempts: int = 50) -> Term | None:
        """Draw a program from the prior, or None if every attempt dies."""
        for _ in range(max_attempts):
            ctx = TypeContext()
            try:
                term = self._sample_one(ctx.instantiate(canonicalize(request)), (), ctx, rng, max_depth)
                return term
            except _SampleFailure:
                continue
        return None

    def _sample_one(self, request: Type, env: tuple[Type, ...], ctx: TypeContext, rng, depth: int) -> Term:
        request = ctx.walk(request)
        if type(request) is TArrow:
            body = self._sample_one(request.right, (request.left,) + env, ctx, rng, depth)
            return Abstraction(body)
        choices = self.expansions(request, env, ctx)
        if depth <= 1:
            choices = [c for c in choices if not c[3]]
        if not choices:
            raise _SampleFailure()
        probs = [math.exp(c[2]) for c in choices]
        total = sum(probs)
        r = rng.random() * total
        acc = 0.0
        chosen = choices[-1]
        for c, p in zip(choices, probs):
            acc += p
            if r <= acc:
                chosen = c
                break
        node, key, logp, arg_types, new_ctx = chosen
        term: Term = node
        context = new_ctx if new_ctx is not None else ctx
        for at in arg_types:
            arg = self._sample_one(at, env, context, rng, depth - 1)
            term = Application(term, arg)
        return term

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def save_text(self) -> str:
        lines = ["langsynth-grammar 1", f"version\t{self.version}",
                 f"variable_log_weight\t{self.variable_log_weight!r}"]
        for p in sorted(self.productions, key=lambda p: p.name):
            printed = print_term(p.term.body) if p.is_invented else p.name
            lines.append(f"production\t{p.name}\t{p.scheme}\t{printed}\t{p.log_weight!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load_text(cls, text: str, literal_names: frozenset[str]) -> "Grammar":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or not lines[0].startswith("langsynth-grammar"):
            raise GrammarError("not a grammar checkpoint")
        version = 0
        var_lw = 0.0
        rows = []
        for line in lines[1:]:
            parts = line.split("\t")
            if parts[0] == "version":
                version = int(parts[1])
            elif parts[0] == "variable_log_weight":
                var_lw = float(parts[1])
            elif parts[0] == "production":
                _, name, type_str, printed, lw = parts
                rows.append((name, type_str, printed, float(lw)))
        inventions: dict[str, Term] = {}
        pending = [(n, t, pr, w) for n, t, pr, w in rows if pr != n]
        resolved_prods: dict[str, Production] = {}
        for name, type_str, printed, lw in rows:
            if printed == name:
                term: Term = Literal(name) if name in literal_names else Primitive(name)
                resolved_prods[name] = Production(
                    term, parse_type(type_str), lw, subcomponent_names(term)
                )
        progress = True
        while pending and progress:
            progress = False
            remaining = []
            for name, type_str, printed, lw in pending:
                try:
                    body = parse_term(printed, inventions=inventions, literals=literal_names)
                except Exception:
                    remaining.append((name, type_str, printed, lw))
                    continue
                inventions[name] = Invented(name, body)
                resolved_prods[name] = Production(
                    inventions[name], parse_type(type_str), lw, subcomponent_names(body)
                )
                progress = True
            pending = remaining
        if pending:
            raise GrammarError(f"unresolvable inventions: {[p[0] for p in pending]}")
        ordered = [resolved_prods[n] for n, _, _, _ in rows]
        return cls(ordered, var_lw, version)


class _SampleFailure(Exception):
    pass


@dataclass
class LikelihoodSummary:
    """Sufficient statistics of a derivation for weight re-estimation:
    how often each key was used and how often each candidate set served
    as a normalizer."""

    uses: dict[int, float]
    normalizers: dict[frozenset, float]
    constant: float

    def log_prior(self, theta: dict[int, float]) -> float:
        total = self.constant
        for k, c in self.uses.items():
            total += c * theta[k]
        for ns, c in self.normalizers.items():
            total -= c * log_sum_exp([theta[k] for k in ns])
        return total


def _infer(term: Term, env: tuple[Type, ...], ctx: TypeContext, grammar: Grammar) -> Type:
    kind = type(term)
    if kind is Var:
        if term.index >= len(env):
            raise IllTypedProgram(f"unbound variable ${term.index}")
        return env[term.index]
    if kind in (Primitive, Literal, Invented):
        try:
            prod = grammar.production_named(term.name)
        except KeyError:
            raise IllTypedProgram(f"unknown primitive {term.name}") from None
        return ctx.instantiate(prod.scheme)
    if kind is Abstraction:
        a = ctx.fresh()
        r = _infer(term.body, (a,) + env, ctx, grammar)
        return TArrow(a, r)
    # Application
    ft = _infer(term.fn, env, ctx, grammar)
    xt = _infer(term.arg, env, ctx, grammar)
    result = ctx.fresh()
    try:
        ctx.unify(ft, TArrow(xt, result))
    except UnificationError as exc:
        raise IllTypedProgram(str(exc)) from exc
    return result


def infer_type(term: Term, grammar: Grammar) -> Type:
    """Most-general type of a closed term, canonically numbered."""
    return grammar.infer_type(term)


def eta_expand(term: Term, request: Type, grammar: Grammar) -> Term:
    """Rewrite a program into the η-long form the derivation walker and
    enumerator operate in: every subterm of arrow type that is not an
    abstraction gets wrapped as (lambda (t $0))."""
    ctx = TypeContext()
    request = ctx.instantiate(canonicalize(request))

    def expand(t: Term, req: Type, env: tuple[Type, ...]) -> Term:
        req = ctx.apply(req)
        if type(req) is TArrow:
            if type(t) is Abstraction:
                return Abstraction(expand(t.body, req.right, (req.left,) + env))
            lifted = Application(shift(t, 1), Var(0))
            return Abstraction(expand(lifted, req.right, (req.left,) + env))
        head, args = application_parse(t)
        if type(head) is Abstraction:
            raise IllTypedProgram("η-expansion expects β-normal programs")
        if type(head) is Var:
            head_type = env[head.index]
        else:
            head_type = ctx.instantiate(grammar.production_named(head.name).scheme)
        arg_types = function_arguments(head_type)
        if len(arg_types) < len(args):
            raise IllTypedProgram(f"over-applied head in {print_term(t)}")
        result_type = head_type
        for _ in range(len(args)):
            result_type = result_type.right
        try:
            ctx.unify(result_type, req)
        except UnificationError as exc:
            raise IllTypedProgram(str(exc)) from exc
        new_args = [expand(a, at, env) for a, at in zip(args, arg_types)]
        return make_application(head, new_args)

    return expand(term, request, ())


# ----------------------------------------------------------------------
# Module-level operation surface
# ----------------------------------------------------------------------

def legal_productions(
    grammar: Grammar, request: Type, env: Sequence[Type] = ()
) -> list[tuple[Production | str, Type, float]]:
    """Productions (and in-scope variables, reported as "$i") legal for a
    request, with instantiated types and probabilities normalized over
    the returned set."""
    ctx = TypeContext()
    request = ctx.instantiate(canonicalize(request))
    env_types = tuple(ctx.instantiate(canonicalize(e)) for e in env)
    out: list[tuple[Production | str, Type, float]] = []
    for node, key, logp, arg_types, new_ctx in grammar.expansions(request, env_types, ctx):
        use_ctx = new_ctx if new_ctx is not None else ctx
        full = use_ctx.apply(request)
        for at in reversed(arg_types):
            full = TArrow(use_ctx.apply(at), full)
        if type(node) is Var:
            out.append((f"${node.index}", canonicalize(full), math.exp(logp)))
        else:
            out.append((grammar.productions[key], canonicalize(full), math.exp(logp)))
    return out


def log_prior(program: Term, grammar: Grammar, request: Type) -> float:
    return grammar.log_prior(program, request)


def grammar_description_length(grammar: Grammar, structure_penalty: float) -> float:
    return structure_penalty * sum(size(p.term.body if p.is_invented else p.term) for p in grammar.productions)


class SummaryMatrix:
    """Vectorized sufficient statistics for a set of frontiers.

    Rows are frontier entries grouped by task; columns are weight keys
    (productions plus the variable rule). Supports the posterior-weighted
    EM that fit_weights and compression scoring share.
    """

    def __init__(self, grammar: Grammar, frontiers):
        import numpy as np

        self.n_keys = len(grammar.productions) + 1
        groups: list[tuple[int, int]] = []
        uses_rows = []
        norm_rows = []
        consts = []
        set_index: dict[frozenset, int] = {}
        row = 0
        for f in frontiers:
            if not f.entries:
                continue
            start = row
            for e in f.entries:
                s = grammar.likelihood_summary(e.program, f.request)
                uses_rows.append(s.uses)
                row_sets = {}
                for ns, c in s.normalizers.items():
                    sid = set_index.setdefault(ns, len(set_index))
                    row_sets[sid] = c
                norm_rows.append(row_sets)
                consts.append(s.constant)
                row += 1
            groups.append((start, row))
        self.groups = groups
        self.n_rows = row
        self.sets = [None] * len(set_index)
        for ns, sid in set_index.items():
            self.sets[sid] = sorted(ns)
        self.U = np.zeros((row, self.n_keys))
        self.N = np.zeros((row, len(set_index)))
        self.const = np.array(consts) if consts else np.zeros(0)
        for i, uses in enumerate(uses_rows):
            for k, c in uses.items():
                self.U[i, k] = c
        for i, row_sets in enumerate(norm_rows):
            for sid, c in row_sets.items():
                self.N[i, sid] = c
        self.M = np.zeros((len(set_index), self.n_keys))
        for sid, keys in enumerate(self.sets):
            for k in keys:
                self.M[sid, k] = 1.0
        self.P = self.N @ self.M  # possible-use counts per entry and key

    def _set_lse(self, theta):
        import numpy as np

        out = np.empty(len(self.sets))
        for sid, keys in enumerate(self.sets):
            w = theta[keys]
            m = w.max()
            out[sid] = m + math.log(np.exp(w - m).sum())
        return out

    def log_priors(self, theta):
        return self.const + self.U @ theta - self.N @ self._set_lse(theta)

    def posterior_weights(self, logps):
        import numpy as np

        w = np.empty_like(logps)
        for start, end in self.groups:
            seg = logps[start:end]
            m = seg.max()
            e = np.exp(seg - m)
            w[start:end] = e / e.sum()
        return w

    def data_log_likelihood(self, theta) -> float:
        import numpy as np

        logps = self.log_priors(theta)
        total = 0.0
        for start, end in self.groups:
            seg = logps[start:end]
            m = seg.max()
            total += m + math.log(np.exp(seg - m).sum())
        return total

    def em(self, theta0, pseudocounts: float, max_iterations: int, tolerance: float):
        import numpy as np

        theta = theta0.copy()
        for _ in range(max_iterations):
            logps = self.log_priors(theta)
            w = self.posterior_weights(logps)
            actual = self.U.T @ w
            possible = self.P.T @ w
            new_theta = np.log(actual + pseudocounts) - np.log(possible + pseudocounts)
            delta = float(np.abs(new_theta - theta).max())
            theta = new_theta
            if delta < tolerance:
                break
        return theta


def fit_weights(
    grammar: Grammar,
    frontiers,
    pseudocounts: float,
    max_iterations: int = 100,
    tolerance: float = 1e-9,
) -> Grammar:
    """Re-estimate production weights from solved frontiers.

    Expected production uses are weighted by each program's posterior
    share within its frontier (priors renormalized over the beam, since
    the task likelihood is 0/1). Iterates to a fixed point so the result
    is idempotent given fixed frontiers. Empty frontiers give uniform
    weights.
    """
    import numpy as np

    matrix = SummaryMatrix(grammar, frontiers)
    n = len(grammar.productions)
    if matrix.n_rows == 0:
        return grammar.with_weights([0.0] * n, 0.0)
    theta0 = np.array([p.log_weight for p in grammar.productions] + [grammar.variable_log_weight])
    theta = matrix.em(theta0, pseudocounts, max_iterations, tolerance)
    return grammar.with_weights([float(t) for t in theta[:n]], float(theta[n]))
