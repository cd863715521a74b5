"""String editing: substring/regex primitives and transducer task generation.

Programs see the input as a full string, split it into substrings with a
regex delimiter, transform the pieces, and flatten back. Patterns are
ordinary substrings built from character constants, the wildcard, and
the negation/alternation combinators, executed with Python's regex
engine over exactly that construct subset.
"""
from __future__ import annotations

import re
import string
import zlib
from functools import lru_cache

import numpy as np

from ..interpreter import EvalError, EvalLimit
from ..terms import (
    Abstraction,
    Application,
    Literal,
    Primitive,
    Term,
    Var,
    make_application,
)
from ..types import TArrow, TCon, TVar, Type
from .base import Domain, GeneratedTask, Task

FULLSTR = TCon("fullstr")
SUBSTR = TCon("substr")
BOOL = TCon("bool")


def tlist(t: Type) -> Type:
    return TCon("list", (t,))


def arrows(*ts: Type) -> Type:
    result = ts[-1]
    for t in reversed(ts[:-1]):
        result = TArrow(t, result)
    return result


T0 = TVar(0)
T1 = TVar(1)

PRIMITIVE_TYPES: dict[str, Type] = {
    "if": arrows(BOOL, T0, T0, T0),
    "cons": arrows(T0, tlist(T0), tlist(T0)),
    "car": arrows(tlist(T0), T0),
    "cdr": arrows(tlist(T0), tlist(T0)),
    "map": arrows(arrows(T0, T1), tlist(T0), tlist(T1)),
    "tail": arrows(tlist(T0), T0),
    "append": arrows(T0, tlist(T0), tlist(T0)),
    "revcdr": arrows(tlist(T0), tlist(T0)),
    "match": arrows(SUBSTR, SUBSTR, BOOL),
    "regexsplit": arrows(SUBSTR, FULLSTR, tlist(SUBSTR)),
    "flatten": arrows(tlist(SUBSTR), FULLSTR),
    "rconcat": arrows(SUBSTR, SUBSTR, SUBSTR),
    "rnot": arrows(SUBSTR, SUBSTR),
    "ror": arrows(SUBSTR, SUBSTR, SUBSTR),
}

LETTERS = tuple(string.ascii_lowercase)
LITERALS: dict[str, str] = {c: c for c in LETTERS}
LITERALS["dot"] = "."
LITERALS["empty"] = ""


@lru_cache(maxsize=4096)
def _compile(pattern: str):
    try:
        return re.compile(pattern)
    except re.error as exc:
        raise EvalError(f"bad pattern {pattern!r}: {exc}") from exc


@lru_cache(maxsize=4096)
def _compile_split(pattern: str):
    try:
        return re.compile(f"({pattern})")
    except re.error as exc:
        raise EvalError(f"bad pattern {pattern!r}: {exc}") from exc


class StringDomain(Domain):
    name = "strings"
    eval_limit = EvalLimit(max_steps=10000, max_depth=200)

    @property
    def request_type(self) -> Type:
        return TArrow(FULLSTR, FULLSTR)

    @property
    def literal_names(self) -> frozenset[str]:
        return frozenset(LITERALS)

    def base_productions(self):
        prods: list[tuple[Term, Type]] = [
            (Primitive(name), scheme) for name, scheme in PRIMITIVE_TYPES.items()
        ]
        prods.extend((Literal(name), SUBSTR) for name in LITERALS)
        return prods

    def arity(self, name: str) -> int:
        return {
            "if": 3, "cons": 2, "car": 1, "cdr": 1, "map": 2, "tail": 1,
            "append": 2, "revcdr": 1, "match": 2, "regexsplit": 2,
            "flatten": 1, "rconcat": 2, "rnot": 1, "ror": 2,
        }[name]

    def literal_value(self, name: str) -> str:
        return LITERALS[name]

    def apply_primitive(self, name, args, call):
        if name == "if":
            cond, then, alt = args
            if not isinstance(cond, bool):
                raise EvalError("if: condition is not a boolean")
            return then if cond else alt
        if name == "cons":
            x, xs = args
            return [x] + xs
        if name == "car":
            (xs,) = args
            if not xs:
                raise EvalError("car of empty list")
            return xs[0]
        if name == "cdr":
            (xs,) = args
            if not xs:
                raise EvalError("cdr of empty list")
            return xs[1:]
        if name == "map":
            f, xs = args
            return [call(f, x) for x in xs]
        if name == "tail":
            (xs,) = args
            if not xs:
                raise EvalError("tail of empty list")
            return xs[-1]
        if name == "append":
            x, xs = args
            return xs + [x]
        if name == "revcdr":
            (xs,) = args
            if not xs:
                raise EvalError("revcdr of empty list")
            return xs[:-1]
        if name == "match":
            pattern, s = args
            return _compile(pattern).fullmatch(s) is not None
        if name == "regexsplit":
            pattern, s = args
            return [piece for piece in _compile_split(pattern).split(s) if piece != ""]
        if name == "flatten":
            (xs,) = args
            return "".join(xs)
        if name == "rconcat":
            a, b = args
            return a + b
        if name == "rnot":
            (s,) = args
            return f"[^{s}]"
        if name == "ror":
            a, b = args
            return f"(({a})|({b}))"
        raise EvalError(f"unknown primitive {name}")

    def output_equal(self, result, expected) -> bool:
        return isinstance(result, str) and result == expected

    def sample_output_value(self, value):
        return value if isinstance(value, str) else None

    def sample_input(self, rng) -> str:
        length = int(rng.integers(2, 8))
        return "".join(LETTERS[int(rng.integers(0, 26))] for _ in range(length))

    # ------------------------------------------------------------------
    # Features
    # ------------------------------------------------------------------

    _N_UNIGRAM = 27
    _N_BIGRAM = 64
    _N_STATS = 4

    @property
    def feature_dim(self) -> int:
        return self._N_UNIGRAM + self._N_BIGRAM + self._N_STATS

    def task_features(self, task: Task) -> np.ndarray:
        uni = np.zeros(self._N_UNIGRAM)
        big = np.zeros(self._N_BIGRAM)
        stats = np.zeros(self._N_STATS)
        n = len(task.examples)
        for x, y in task.examples:
            for s, sign in ((x, -1.0), (y, 1.0)):
                for c in s:
                    idx = ord(c) - 97
                    uni[idx if 0 <= idx < 26 else 26] += sign
                for i in range(len(s) - 1):
                    bucket = zlib.crc32(s[i : i + 2].encode()) % self._N_BIGRAM
                    big[bucket] += sign
            stats[0] += len(x)
            stats[1] += len(y)
            stats[2] += len(y) - len(x)
            stats[3] = max(stats[3], abs(len(y) - len(x)))
        uni /= n
        big /= n
        stats[:3] /= n
        return np.concatenate([uni, big, stats])

    # ------------------------------------------------------------------
    # Task generation
    # ------------------------------------------------------------------

    def generate_tasks(
        self,
        n: int,
        seed: int,
        examples_per_task: int = 30,
        split: str = "train",
    ) -> list[GeneratedTask]:
        rng = np.random.default_rng(seed)
        return _generate_split(self, n, rng, set(), examples_per_task, split)


def _generate_split(domain, n, rng, seen_specs, examples_per_task, split):
    from ..search import check_task

    out: list[GeneratedTask] = []
    attempts = 0
    while len(out) < n and attempts < n * 200 + 200:
        attempts += 1
        spec = _sample_transducer(rng)
        key = spec.key()
        if key in seen_specs:
            continue
        examples = _make_examples(spec, rng, examples_per_task)
        if examples is None:
            continue
        seen_specs.add(key)
        task = Task(
            id=f"{split}-str-{len(out):04d}",
            request=domain.request_type,
            examples=examples,
            description=spec.description(),
            split=split,
        )
        program = spec.program()
        if not check_task(program, task, domain):
            raise RuntimeError(f"ground-truth program fails its own task: {spec.key()}")
        out.append(GeneratedTask(task, program, [spec.description()]))
    if len(out) < n:
        raise RuntimeError(f"only generated {len(out)} of {n} string tasks")
    return out


def generate_string_dataset(
    n_train: int, n_test: int, seed: int, examples_per_task: int = 30
) -> tuple[list[GeneratedTask], list[GeneratedTask]]:
    """Train/test splits with disjoint transducer specs."""
    rng = np.random.default_rng(seed)
    seen: set[tuple] = set()
    train = _generate_split(STRINGS, n_train, rng, seen, examples_per_task, "train")
    test = _generate_split(STRINGS, n_test, rng, seen, examples_per_task, "test")
    return train, test


def _word_tokens(word: str) -> list[str]:
    return list(word)


class _Transducer:
    """One sampled string rewrite with its oracle, program, and language."""

    def __init__(self, family: str, target: str, payload: str):
        self.family = family
        self.target = target
        self.payload = payload

    def key(self):
        return (self.family, self.target, self.payload)

    def apply(self, s: str) -> str:
        family, target, payload = self.family, self.target, self.payload
        if family == "remove_first":
            return s[1:]
        if family == "remove_last":
            return s[:-1]
        if family == "add_start":
            return payload + s
        if family == "add_end":
            return s + payload
        if family == "remove":
            return s.replace(target, "")
        if family == "replace":
            return s.replace(target, payload)
        if family == "add_before":
            return s.replace(target, payload + target)
        if family == "double":
            return s.replace(target, target + target)
        raise ValueError(family)

    def description(self) -> list[str]:
        family, target, payload = self.family, self.target, self.payload
        if family == "remove_first":
            return ["remove", "the", "first", "letter"]
        if family == "remove_last":
            return ["remove", "the", "last", "letter"]
        if family == "add_start":
            return ["add"] + _word_tokens(payload) + ["at", "the", "start"]
        if family == "add_end":
            return ["add"] + _word_tokens(payload) + ["at", "the", "end"]
        if family == "remove":
            return ["remove", "all"] + _word_tokens(target)
        if family == "replace":
            return ["replace", "every"] + _word_tokens(target) + ["with"] + _word_tokens(payload)
        if family == "add_before":
            return ["add"] + _word_tokens(payload) + ["before", "every"] + _word_tokens(target)
        if family == "double":
            return ["double", "every"] + _word_tokens(target)
        raise ValueError(family)

    def program(self) -> Term:
        family = self.family
        split_dot = make_application(
            Primitive("regexsplit"), [Literal("dot"), Var(0)]
        )
        if family in ("remove_first", "remove_last", "add_start", "add_end"):
            if family == "remove_first":
                inner = Application(Primitive("cdr"), split_dot)
            elif family == "remove_last":
                inner = Application(Primitive("revcdr"), split_dot)
            elif family == "add_start":
                inner = make_application(
                    Primitive("cons"), [_pattern_term(self.payload), split_dot]
                )
            else:
                inner = make_application(
                    Primitive("append"), [_pattern_term(self.payload), split_dot]
                )
            return Abstraction(Application(Primitive("flatten"), inner))
        target = _pattern_term(self.target)
        test = make_application(Primitive("match"), [target, Var(0)])
        if family == "remove":
            replacement: Term = Literal("empty")
        elif family == "replace":
            replacement = _pattern_term(self.payload)
        elif family == "add_before":
            replacement = make_application(
                Primitive("rconcat"), [_pattern_term(self.payload), Var(0)]
            )
        else:  # double
            replacement = make_application(Primitive("rconcat"), [Var(0), Var(0)])
        mapper = Abstraction(
            make_application(Primitive("if"), [test, replacement, Var(0)])
        )
        split_target = make_application(
            Primitive("regexsplit"), [_pattern_term(self.target), Var(0)]
        )
        body = Application(
            Primitive("flatten"),
            make_application(Primitive("map"), [mapper, split_target]),
        )
        return Abstraction(body)


def _pattern_term(text: str) -> Term:
    """A closed pattern term, safe to embed at any binder depth."""
    if text == "":
        return Literal("empty")
    nodes = [Literal(c) for c in text]
    term = nodes[-1]
    for node in reversed(nodes[:-1]):
        term = make_application(Primitive("rconcat"), [node, term])
    return term


_FAMILIES = (
    ("remove_first", 5),
    ("remove_last", 5),
    ("add_start", 7),
    ("add_end", 7),
    ("remove", 22),
    ("replace", 22),
    ("add_before", 16),
    ("double", 16),
)
_FAMILY_NAMES = tuple(f for f, _ in _FAMILIES)
_FAMILY_WEIGHTS = np.array([w for _, w in _FAMILIES], dtype=float)
_FAMILY_WEIGHTS /= _FAMILY_WEIGHTS.sum()


def _sample_transducer(rng) -> _Transducer:
    family = _FAMILY_NAMES[int(rng.choice(len(_FAMILY_NAMES), p=_FAMILY_WEIGHTS))]
    def pick_char() -> str:
        return LETTERS[int(rng.integers(0, 26))]

    def pick_seq() -> str:
        if rng.random() < 0.85:
            return pick_char()
        return pick_char() + pick_char()

    target = ""
    payload = ""
    if family in ("remove", "double"):
        target = pick_seq()
    elif family in ("replace", "add_before"):
        target = pick_seq()
        payload = pick_char()
        while payload in target:
            payload = pick_char()
    elif family in ("add_start", "add_end"):
        payload = pick_seq()
    return _Transducer(family, target, payload)


def _make_examples(spec: _Transducer, rng, count: int):
    """Inputs are word-like strings; targeted families get the target
    embedded in most inputs so the behavior is demonstrated."""
    examples = []
    seen = set()
    interesting = 0
    for _ in range(count * 6):
        if len(examples) >= count:
            break
        length = int(rng.integers(2, 7))
        word = "".join(LETTERS[int(rng.integers(0, 26))] for _ in range(length))
        if spec.target and rng.random() < 0.8:
            pos = int(rng.integers(0, len(word) + 1))
            word = word[:pos] + spec.target + word[pos:]
        if word in seen:
            continue
        seen.add(word)
        result = spec.apply(word)
        if result != word:
            interesting += 1
        examples.append((word, result))
    if len(examples) < count:
        return None
    if interesting < max(2, count // 4):
        return None
    return examples


STRINGS = StringDomain()
