"""Polymorphic types: variables, constructors, arrows, and unification.

Type schemes are represented as plain types whose variables are all
implicitly quantified; ``instantiate`` replaces every variable with a
fresh one, so instantiating twice yields alpha-equivalent types over
disjoint variables.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union


class UnificationError(Exception):
    """Two types cannot be made equal."""


class TypeParseError(ValueError):
    pass


@dataclass(frozen=True)
class TVar:
    index: int

    # Variables never have a ground signature.
    ground_sig = None

    def __str__(self) -> str:
        return f"t{self.index}"


@dataclass(frozen=True)
class TCon:
    name: str
    args: tuple = ()

    def __post_init__(self):
        # Precomputed canonical signature for variable-free types; lets
        # hole signatures skip recursion over ground subtrees.
        sig = None
        if not self.args:
            sig = self.name
        else:
            parts = [a.ground_sig for a in self.args]
            if all(p is not None for p in parts):
                sig = f"{self.name}[{','.join(parts)},]"
        object.__setattr__(self, "ground_sig", sig)

    def __str__(self) -> str:
        if self.args:
            return f"{self.name}({', '.join(str(a) for a in self.args)})"
        return self.name


@dataclass(frozen=True)
class TArrow:
    left: "Type"
    right: "Type"

    def __post_init__(self):
        sig = None
        l, r = self.left.ground_sig, self.right.ground_sig
        if l is not None and r is not None:
            sig = f"({l}>{r})"
        object.__setattr__(self, "ground_sig", sig)

    def __str__(self) -> str:
        left = f"({self.left})" if isinstance(self.left, TArrow) else str(self.left)
        return f"{left} → {self.right}"


Type = Union[TVar, TCon, TArrow]


def is_arrow(t: Type) -> bool:
    return isinstance(t, TArrow)


def returns(t: Type) -> Type:
    """Final return type once all arrows are peeled off."""
    while isinstance(t, TArrow):
        t = t.right
    return t


def function_arguments(t: Type) -> list[Type]:
    args = []
    while isinstance(t, TArrow):
        args.append(t.left)
        t = t.right
    return args


def type_arity(t: Type) -> int:
    n = 0
    while isinstance(t, TArrow):
        n += 1
        t = t.right
    return n


def free_type_vars(t: Type) -> list[int]:
    """Variable indices in first-occurrence (pre-order) order."""
    seen: list[int] = []

    def walk(u: Type) -> None:
        if isinstance(u, TVar):
            if u.index not in seen:
                seen.append(u.index)
        elif isinstance(u, TArrow):
            walk(u.left)
            walk(u.right)
        else:
            for a in u.args:
                walk(a)

    walk(t)
    return seen


def quantifier_count(t: Type) -> int:
    return len(free_type_vars(t))


def substitute_vars(t: Type, mapping: dict[int, Type]) -> Type:
    if isinstance(t, TVar):
        return mapping.get(t.index, t)
    if isinstance(t, TArrow):
        return TArrow(substitute_vars(t.left, mapping), substitute_vars(t.right, mapping))
    if t.args:
        return TCon(t.name, tuple(substitute_vars(a, mapping) for a in t.args))
    return t


def canonicalize(t: Type) -> Type:
    """Rename variables to t0, t1, ... in first-occurrence order."""
    order = free_type_vars(t)
    mapping = {v: TVar(i) for i, v in enumerate(order)}
    return substitute_vars(t, mapping)


class TypeContext:
    """Mutable unification context: fresh-variable supply plus substitution."""

    __slots__ = ("next_index", "subst")

    def __init__(self, next_index: int = 0, subst: dict[int, Type] | None = None):
        self.next_index = next_index
        self.subst = {} if subst is None else subst

    def copy(self) -> "TypeContext":
        return TypeContext(self.next_index, dict(self.subst))

    def fresh(self) -> TVar:
        v = TVar(self.next_index)
        self.next_index += 1
        return v

    def walk(self, t: Type) -> Type:
        subst = self.subst
        while isinstance(t, TVar):
            bound = subst.get(t.index)
            if bound is None:
                return t
            t = bound
        return t

    def apply(self, t: Type) -> Type:
        t = self.walk(t)
        if isinstance(t, TArrow):
            return TArrow(self.apply(t.left), self.apply(t.right))
        if isinstance(t, TCon) and t.args:
            return TCon(t.name, tuple(self.apply(a) for a in t.args))
        return t

    def _occurs(self, index: int, t: Type) -> bool:
        t = self.walk(t)
        if isinstance(t, TVar):
            return t.index == index
        if isinstance(t, TArrow):
            return self._occurs(index, t.left) or self._occurs(index, t.right)
        return any(self._occurs(index, a) for a in t.args)

    def unify(self, a: Type, b: Type) -> None:
        a = self.walk(a)
        b = self.walk(b)
        if isinstance(a, TVar):
            if isinstance(b, TVar) and b.index == a.index:
                return
            if self._occurs(a.index, b):
                raise UnificationError(f"occurs check: {a} in {b}")
            self.subst[a.index] = b
            return
        if isinstance(b, TVar):
            self.unify(b, a)
            return
        if isinstance(a, TArrow) and isinstance(b, TArrow):
            self.unify(a.left, b.left)
            self.unify(a.right, b.right)
            return
        if isinstance(a, TCon) and isinstance(b, TCon):
            if a.name != b.name or len(a.args) != len(b.args):
                raise UnificationError(f"cannot unify {a} with {b}")
            for x, y in zip(a.args, b.args):
                self.unify(x, y)
            return
        raise UnificationError(f"cannot unify {a} with {b}")

    def instantiate(self, scheme: Type) -> Type:
        mapping = {v: self.fresh() for v in free_type_vars(scheme)}
        if not mapping:
            return scheme
        return substitute_vars(scheme, mapping)


def _tokenize_type(text: str) -> Iterator[tuple[str, int]]:
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "(),":
            yield c, i
            i += 1
        elif text.startswith("→", i):
            yield "->", i
            i += 1
        elif text.startswith("->", i):
            yield "->", i
            i += 2
        else:
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            if j == i:
                raise TypeParseError(f"bad character {c!r} at position {i}")
            yield text[i:j], i
            i = j


def parse_type(text: str) -> Type:
    tokens = list(_tokenize_type(text))
    pos = 0

    def peek() -> str | None:
        return tokens[pos][0] if pos < len(tokens) else None

    def expect(tok: str) -> None:
        nonlocal pos
        if peek() != tok:
            where = tokens[pos][1] if pos < len(tokens) else len(text)
            raise TypeParseError(f"expected {tok!r} at position {where}")
        pos += 1

    def atom() -> Type:
        nonlocal pos
        tok = peek()
        if tok is None:
            raise TypeParseError("unexpected end of type")
        if tok == "(":
            pos += 1
            inner = arrow()
            expect(")")
            return inner
        pos += 1
        if tok[0] == "t" and tok[1:].isdigit():
            return TVar(int(tok[1:]))
        if peek() == "(":
            pos += 1
            args = [arrow()]
            while peek() == ",":
                pos += 1
                args.append(arrow())
            expect(")")
            return TCon(tok, tuple(args))
        return TCon(tok)

    def arrow() -> Type:
        left = atom()
        if peek() == "->":
            nonlocal pos
            pos += 1
            return TArrow(left, arrow())
        return left

    result = arrow()
    if pos != len(tokens):
        raise TypeParseError(f"trailing tokens at position {tokens[pos][1]}")
    return result
