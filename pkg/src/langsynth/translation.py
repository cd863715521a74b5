"""Word-primitive translation: alignment EM, mutual exclusivity, scoring,
generation, and description-length bookkeeping under library refactoring.

The table stores conditional probabilities in both directions between
description words and linearized program tokens, estimated by
alignment-marginalizing EM. Hard alignment links (the union of the two
directional argmax alignments) back the description-length accounting:
each link costs the negative log of its translation probability, and a
new library abstraction compresses a word's alignment exactly when the
abstraction's subcomponents all sit inside that word's aligned token
set, collapsing those links into one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

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
)

LAMBDA_TOKEN = "λ"
APPLY_MARKER = "@"
FLOOR_PROBABILITY = 1e-7


@dataclass(frozen=True)
class TranslationParams:
    em_iterations: int = 10
    me_alpha: float = 0.1
    me_enabled: bool = True

    def __post_init__(self):
        if self.em_iterations < 1:
            raise ValueError("em_iterations must be at least 1")
        if self.me_alpha <= 0:
            raise ValueError("me_alpha must be positive")


@dataclass
class AlignmentRecord:
    """Hard links for one training pair: (program token index, word index)."""

    program_tokens: list[str]
    description_tokens: list[str]
    links: frozenset


@dataclass
class TranslationTable:
    word_given_prim: dict = field(default_factory=dict)   # (l, w) -> t[w|l]
    prim_given_word: dict = field(default_factory=dict)   # (l, w) -> t[l|w]
    counts: dict = field(default_factory=dict)            # (l, w) -> expected count
    vocab_known: frozenset = frozenset()
    vocab_new: frozenset = frozenset()
    alignments: list = field(default_factory=list)
    log_likelihoods: list = field(default_factory=list)

    @classmethod
    def uniform(cls, prim_tokens, words) -> "TranslationTable":
        prims = sorted(set(prim_tokens))
        words = sorted(set(words))
        table = cls(vocab_known=frozenset(words))
        if not prims or not words:
            return table
        pw = 1.0 / len(words)
        pl = 1.0 / len(prims)
        for l in prims:
            for w in words:
                table.word_given_prim[(l, w)] = pw
                table.prim_given_word[(l, w)] = pl
        return table

    def words_for(self, prim: str) -> list[tuple[str, float]]:
        out = [(w, p) for (l, w), p in self.word_given_prim.items() if l == prim and p > 0]
        out.sort(key=lambda x: (-x[1], x[0]))
        return out

    def save_text(self) -> str:
        keys = sorted(set(self.word_given_prim) | set(self.prim_given_word) | set(self.counts))
        lines = ["langsynth-translation 1"]
        for l, w in keys:
            lines.append(
                "\t".join(
                    [
                        l,
                        w,
                        f"{self.word_given_prim.get((l, w), 0.0):.9f}",
                        f"{self.prim_given_word.get((l, w), 0.0):.9f}",
                        f"{self.counts.get((l, w), 0.0):.9f}",
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def load_text(cls, text: str) -> "TranslationTable":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or not lines[0].startswith("langsynth-translation"):
            raise ValueError("not a translation checkpoint")
        table = cls()
        words = set()
        for line in lines[1:]:
            l, w, wl, lw, c = line.split("\t")
            table.word_given_prim[(l, w)] = float(wl)
            table.prim_given_word[(l, w)] = float(lw)
            if float(c):
                table.counts[(l, w)] = float(c)
            words.add(w)
        table.vocab_known = frozenset(words)
        return table


def linearize(program: Term) -> list[str]:
    """Pre-order tokens: names, λ markers, $i variables, and an @k arity
    marker before variable-headed applications (which delinearize needs,
    since a variable's arity is not recoverable from tokens alone)."""
    out: list[str] = []

    def walk(t: Term) -> None:
        kind = type(t)
        if kind is Application:
            head, args = application_parse(t)
            if type(head) is Var or type(head) is Abstraction:
                out.append(f"{APPLY_MARKER}{len(args)}")
            walk(head)
            for a in args:
                walk(a)
        elif kind is Abstraction:
            out.append(LAMBDA_TOKEN)
            walk(t.body)
        elif kind is Var:
            out.append(f"${t.index}")
        else:
            out.append(t.name)

    walk(program)
    return out


def delinearize(tokens: list[str], arities, inventions=None, literals=frozenset()) -> Term:
    """Invert linearize. ``arities`` maps primitive names to argument
    counts (a grammar's arity_of, or a domain's arity)."""
    pos = 0

    def arity_of(name: str) -> int:
        if callable(arities):
            return arities(name)
        return arities[name]

    def build() -> Term:
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == LAMBDA_TOKEN:
            return Abstraction(build())
        if tok.startswith(APPLY_MARKER):
            n = int(tok[1:])
            head = build()
            args = [build() for _ in range(n)]
            return make_application(head, args)
        if tok.startswith("$"):
            return Var(int(tok[1:]))
        if inventions is not None and tok in inventions:
            node: Term = inventions[tok]
            n = arity_of(tok)
        elif tok in literals:
            node = Literal(tok)
            n = 0
        else:
            node = Primitive(tok)
            n = arity_of(tok)
        args = [build() for _ in range(n)]
        return make_application(node, args)

    term = build()
    if pos != len(tokens):
        raise ValueError("trailing tokens in linearized program")
    return term


def primitive_tokens(program: Term) -> list[str]:
    """Named tokens only (primitives, literals, inventions), in pre-order."""
    return [
        t
        for t in linearize(program)
        if t != LAMBDA_TOKEN and not t.startswith("$") and not t.startswith(APPLY_MARKER)
    ]


def _em_direction(pairs, iterations):
    """IBM Model 1 EM for P(target | source), pairs = (source, target).

    Returns (table, expected_counts, per-iteration log likelihoods).
    """
    co = set()
    for source, target in pairs:
        for s in source:
            for t in target:
                co.add((s, t))
    if not co:
        return {}, {}, []
    sources = {}
    for s, t in co:
        sources.setdefault(s, set()).add(t)
    table = {}
    for s, ts in sources.items():
        p = 1.0 / len(ts)
        for t in ts:
            table[(s, t)] = p
    lls = []
    counts: dict = {}
    for _ in range(iterations):
        counts = {}
        totals: dict = {}
        ll = 0.0
        for source, target in pairs:
            m = len(source)
            for t in target:
                denom = 0.0
                for s in source:
                    denom += table[(s, t)]
                ll += math.log(denom / m) if denom > 0 else -math.inf
                if denom <= 0:
                    continue
                for s in source:
                    share = table[(s, t)] / denom
                    counts[(s, t)] = counts.get((s, t), 0.0) + share
                    totals[s] = totals.get(s, 0.0) + share
        lls.append(ll)
        table = {
            (s, t): c / totals[s] for (s, t), c in counts.items() if totals[s] > 0
        }
    return table, counts, lls


def _hard_links(prog_tokens, desc_tokens, word_given_prim, prim_given_word):
    """Union of the two directional argmax alignments; many-to-many."""
    links = set()
    for j, w in enumerate(desc_tokens):
        best, best_p = None, 0.0
        for i, l in enumerate(prog_tokens):
            p = word_given_prim.get((l, w), 0.0)
            if p > best_p + 1e-15 or (best is None and p > 0):
                best, best_p = i, p
        if best is not None:
            links.add((best, j))
    for i, l in enumerate(prog_tokens):
        best, best_p = None, 0.0
        for j, w in enumerate(desc_tokens):
            p = prim_given_word.get((l, w), 0.0)
            if p > best_p + 1e-15 or (best is None and p > 0):
                best, best_p = j, p
        if best is not None:
            links.add((i, best))
    return frozenset(links)


def train_em(pairs, params: TranslationParams) -> TranslationTable:
    """Estimate both directional token tables from (program tokens,
    description tokens) pairs, keeping expected alignment counts and the
    per-iteration corpus log likelihood (non-decreasing)."""
    if not pairs:
        raise ValueError("train_em needs at least one pair")
    cleaned = []
    for prog, desc in pairs:
        if not prog or not desc:
            continue
        cleaned.append((list(prog), list(desc)))
    if not cleaned:
        raise ValueError("train_em needs non-empty token sequences")

    wl_table, wl_counts, wl_lls = _em_direction(
        [(p, d) for p, d in cleaned], params.em_iterations
    )
    lw_table, _, _ = _em_direction([(d, p) for p, d in cleaned], params.em_iterations)

    table = TranslationTable()
    table.word_given_prim = {(l, w): p for (l, w), p in wl_table.items()}
    table.prim_given_word = {(l, w): p for (w, l), p in lw_table.items()}
    table.counts = {(l, w): c for (l, w), c in wl_counts.items()}
    table.vocab_known = frozenset(w for _, d in cleaned for w in d)
    table.log_likelihoods = wl_lls
    table.alignments = [
        AlignmentRecord(
            p, d, _hard_links(p, d, table.word_given_prim, table.prim_given_word)
        )
        for p, d in cleaned
    ]
    return table


def apply_mutual_exclusivity(
    table: TranslationTable, grammar, new_words, alpha: float
) -> TranslationTable:
    """Inject pseudo-alignment mass between each new word and each named
    production, proportional to the inverse of the production's prior
    probability, then renormalize both tables from the merged counts."""
    new_words = frozenset(new_words)
    if new_words & table.vocab_known:
        raise ValueError("new words must be disjoint from the known vocabulary")
    if not new_words:
        return table

    weights = {p.name: p.log_weight for p in grammar.productions}
    z = _log_sum_exp(list(weights.values()))
    prior = {name: math.exp(w - z) for name, w in weights.items()}

    counts = dict(table.counts)
    for w in sorted(new_words):
        for name in sorted(prior):
            counts[(name, w)] = counts.get((name, w), 0.0) + alpha / prior[name]

    word_given_prim: dict = {}
    prim_given_word: dict = {}
    prim_totals: dict = {}
    word_totals: dict = {}
    for (l, w), c in counts.items():
        prim_totals[l] = prim_totals.get(l, 0.0) + c
        word_totals[w] = word_totals.get(w, 0.0) + c
    for (l, w), c in counts.items():
        word_given_prim[(l, w)] = c / prim_totals[l]
        prim_given_word[(l, w)] = c / word_totals[w]

    return TranslationTable(
        word_given_prim=word_given_prim,
        prim_given_word=prim_given_word,
        counts=counts,
        vocab_known=table.vocab_known,
        vocab_new=new_words,
        alignments=list(table.alignments),
        log_likelihoods=list(table.log_likelihoods),
    )


def _log_sum_exp(values):
    m = max(values)
    return m + math.log(sum(math.exp(v - m) for v in values))


def score_description(description_tokens, program: Term, table: TranslationTable) -> float:
    """log of the product over description words and program tokens of
    the word-given-token probability, floored for unseen pairs."""
    prog = primitive_tokens(program)
    total = 0.0
    for w in description_tokens:
        for l in prog:
            p = table.word_given_prim.get((l, w), 0.0)
            total += math.log(p if p > FLOOR_PROBABILITY else FLOOR_PROBABILITY)
    return total


class SmoothedLM:
    """Add-k bigram language model over description tokens."""

    BOS = "<s>"
    EOS = "</s>"

    def __init__(self, corpus, k: float = 0.1):
        self.k = k
        self.bigrams: dict = {}
        self.unigrams: dict = {}
        vocab = {self.EOS}
        for tokens in corpus:
            prev = self.BOS
            for tok in list(tokens) + [self.EOS]:
                self.bigrams[(prev, tok)] = self.bigrams.get((prev, tok), 0) + 1
                self.unigrams[prev] = self.unigrams.get(prev, 0) + 1
                vocab.add(tok)
                prev = tok
        self.vocab = vocab
        self.vocab_size = max(1, len(vocab))

    def log_prob(self, word: str, prev: str) -> float:
        num = self.bigrams.get((prev, word), 0) + self.k
        den = self.unigrams.get(prev, 0) + self.k * self.vocab_size
        return math.log(num / den)

    def sequence_log_prob(self, tokens) -> float:
        prev = self.BOS
        total = 0.0
        for tok in tokens:
            total += self.log_prob(tok, prev)
            prev = tok
        return total + self.log_prob(self.EOS, prev)


def generate_description(
    program: Term,
    table: TranslationTable,
    lm: SmoothedLM | None,
    mode: str = "greedy",
    seed: int = 0,
    lm_weight: float = 1.0,
    candidates_per_token: int = 4,
    beam_width: int = 8,
) -> list[str]:
    """Noisy-channel decode: each program token proposes candidate words
    from its translation column; sequences are rescored by the language
    model. Tokens with no aligned words emit nothing. Deterministic for
    greedy mode and for a fixed seed in sample mode."""
    import numpy as np

    rng = np.random.default_rng(seed)
    beams: list[tuple[float, list[str], str]] = [(0.0, [], SmoothedLM.BOS)]
    for l in primitive_tokens(program):
        options = table.words_for(l)[:candidates_per_token]
        if not options:
            continue
        extended: list[tuple[float, list[str], str]] = []
        for score, words, prev in beams:
            for w, p in options:
                s = score + math.log(max(p, FLOOR_PROBABILITY))
                if lm is not None:
                    s += lm_weight * lm.log_prob(w, prev)
                extended.append((s, words + [w], w))
        extended.sort(key=lambda b: (-b[0], b[1]))
        if mode == "sample":
            scores = np.array([b[0] for b in extended])
            probs = np.exp(scores - scores.max())
            probs /= probs.sum()
            keep = rng.choice(len(extended), size=min(beam_width, len(extended)),
                              replace=False, p=probs)
            beams = [extended[int(i)] for i in sorted(keep, key=lambda i: -extended[int(i)][0])]
        else:
            beams = extended[:beam_width]
    if not beams:
        return []
    if mode == "sample" and len(beams) > 1:
        scores = np.array([b[0] for b in beams])
        probs = np.exp(scores - scores.max())
        probs /= probs.sum()
        return beams[int(rng.choice(len(beams), p=probs))][1]
    return beams[0][1]


def _link_cost(table: TranslationTable, l: str, w: str) -> float:
    p = table.word_given_prim.get((l, w), 0.0)
    return -math.log(p if p > FLOOR_PROBABILITY else FLOOR_PROBABILITY)


def translation_description_length(table: TranslationTable, grammar=None) -> float:
    """Total description length of the hard alignments: each link costs
    the negative log of its translation probability."""
    total = 0.0
    for record in table.alignments:
        for i, j in record.links:
            total += _link_cost(table, record.program_tokens[i], record.description_tokens[j])
    return total


def refactored_description_length(
    table: TranslationTable, candidate_subcomponents, frontiers=None
) -> float:
    """Description length after hypothetically rewriting with a candidate
    abstraction, without re-running EM.

    For each word, the links into the candidate's subcomponents collapse
    into a single link (costing the cheapest of the collapsed links) iff
    the subcomponent set is contained in the word's aligned token set and
    at least two tokens collapse.
    """
    sub = set(candidate_subcomponents)
    if len(sub) < 2:
        return translation_description_length(table)
    total = 0.0
    for record in table.alignments:
        by_word: dict[int, list[int]] = {}
        for i, j in record.links:
            by_word.setdefault(j, []).append(i)
        for j, positions in by_word.items():
            w = record.description_tokens[j]
            aligned = {record.program_tokens[i] for i in positions}
            costs = [
                _link_cost(table, record.program_tokens[i], w) for i in positions
            ]
            in_sub = [
                c for i, c in zip(positions, costs)
                if record.program_tokens[i] in sub
            ]
            if sub <= aligned and len(in_sub) >= 2:
                total += sum(costs) - sum(in_sub) + min(in_sub)
            else:
                total += sum(costs)
    return total
