"""Immutable λ-calculus terms with de Bruijn variables.

Terms are hash-consed enough for fast structural equality (hashes are
precomputed at construction), printed and parsed as s-expressions, and
support capture-avoiding substitution and β-reduction. α-equivalence is
structural equality because binders are nameless.
"""
from __future__ import annotations

from typing import Callable, Iterator, Mapping


class TermError(Exception):
    pass


class ParseError(TermError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnboundVariableError(TermError):
    pass


class Term:
    __slots__ = ("_hash",)

    def __hash__(self) -> int:
        return self._hash


class Primitive(Term):
    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "_hash", hash(("p", name)))

    def __eq__(self, other):
        return type(other) is Primitive and other.name == self.name

    __hash__ = Term.__hash__

    def __repr__(self):
        return f"Primitive({self.name!r})"


class Literal(Term):
    """A named constant whose value is supplied by the domain executor."""

    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "_hash", hash(("c", name)))

    def __eq__(self, other):
        return type(other) is Literal and other.name == self.name

    __hash__ = Term.__hash__

    def __repr__(self):
        return f"Literal({self.name!r})"


class Var(Term):
    __slots__ = ("index",)

    def __init__(self, index: int):
        if index < 0:
            raise TermError("variable index must be non-negative")
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "_hash", hash(("v", index)))

    def __eq__(self, other):
        return type(other) is Var and other.index == self.index

    __hash__ = Term.__hash__

    def __repr__(self):
        return f"Var({self.index})"


class Abstraction(Term):
    __slots__ = ("body",)

    def __init__(self, body: Term):
        object.__setattr__(self, "body", body)
        object.__setattr__(self, "_hash", hash(("l", body._hash)))

    def __eq__(self, other):
        return type(other) is Abstraction and other.body == self.body

    __hash__ = Term.__hash__

    def __repr__(self):
        return f"Abstraction({self.body!r})"


class Application(Term):
    __slots__ = ("fn", "arg")

    def __init__(self, fn: Term, arg: Term):
        object.__setattr__(self, "fn", fn)
        object.__setattr__(self, "arg", arg)
        object.__setattr__(self, "_hash", hash(("a", fn._hash, arg._hash)))

    def __eq__(self, other):
        return type(other) is Application and other.fn == self.fn and other.arg == self.arg

    __hash__ = Term.__hash__

    def __repr__(self):
        return f"Application({self.fn!r}, {self.arg!r})"


class Invented(Term):
    """A learned library production. Prints as its name; equality is by body."""

    __slots__ = ("name", "body")

    def __init__(self, name: str, body: Term):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "body", body)
        object.__setattr__(self, "_hash", hash(("i", body._hash)))

    def __eq__(self, other):
        return type(other) is Invented and other.body == self.body

    __hash__ = Term.__hash__

    def __repr__(self):
        return f"Invented({self.name!r})"


def print_term(t: Term) -> str:
    out: list[str] = []
    _print_into(t, out)
    return "".join(out)


def _print_into(t: Term, out: list[str]) -> None:
    kind = type(t)
    if kind is Application:
        out.append("(")
        head, args = application_parse(t)
        _print_into(head, out)
        for a in args:
            out.append(" ")
            _print_into(a, out)
        out.append(")")
    elif kind is Abstraction:
        out.append("(lambda ")
        _print_into(t.body, out)
        out.append(")")
    elif kind is Var:
        out.append(f"${t.index}")
    else:
        out.append(t.name)


def application_parse(t: Term) -> tuple[Term, list[Term]]:
    """Split an application spine into (head, [arg0, arg1, ...])."""
    args: list[Term] = []
    while type(t) is Application:
        args.append(t.arg)
        t = t.fn
    args.reverse()
    return t, args


def make_application(head: Term, args: list[Term]) -> Term:
    for a in args:
        head = Application(head, a)
    return head


def parse_term(
    text: str,
    inventions: Mapping[str, Term] | None = None,
    literals: frozenset[str] | set[str] = frozenset(),
    allow_open: bool = False,
) -> Term:
    """Parse the canonical s-expression form.

    λ is written ``(lambda BODY)`` and variables ``$0``, ``$1``. Names in
    ``literals`` become Literal nodes, names in ``inventions`` resolve to
    the recorded Invented node, everything else is a Primitive.
    """
    tokens: list[tuple[str, int]] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            tokens.append((c, i))
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            tokens.append((text[i:j], i))
            i = j
    if not tokens:
        raise ParseError("empty input", 0)

    pos = 0

    def parse_expr() -> Term:
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of input", len(text))
        tok, where = tokens[pos]
        pos += 1
        if tok == ")":
            raise ParseError("unexpected ')'", where)
        if tok == "(":
            if pos < len(tokens) and tokens[pos][0] == "lambda":
                pos += 1
                body = parse_expr()
                if pos >= len(tokens) or tokens[pos][0] != ")":
                    raise ParseError("expected ')' after lambda body", where)
                pos += 1
                return Abstraction(body)
            items = []
            while pos < len(tokens) and tokens[pos][0] != ")":
                items.append(parse_expr())
            if pos >= len(tokens):
                raise ParseError("unclosed '('", where)
            pos += 1
            if not items:
                raise ParseError("empty application", where)
            return make_application(items[0], items[1:])
        return parse_atom(tok, where)

    def parse_atom(tok: str, where: int) -> Term:
        if tok.startswith("$"):
            if not tok[1:].isdigit():
                raise ParseError(f"bad variable {tok!r}", where)
            return Var(int(tok[1:]))
        if inventions is not None and tok in inventions:
            return inventions[tok]
        if tok in literals:
            return Literal(tok)
        return Primitive(tok)

    result = parse_expr()
    if pos != len(tokens):
        raise ParseError("trailing tokens", tokens[pos][1])
    if not allow_open:
        depth = max_free_index(result)
        if depth >= 0:
            raise UnboundVariableError(
                f"variable ${depth} escapes its binders in {print_term(result)}"
            )
    return result


def max_free_index(t: Term, depth: int = 0) -> int:
    """Largest free de Bruijn index relative to `depth` binders, or -1 if closed."""
    kind = type(t)
    if kind is Var:
        return t.index - depth
    if kind is Abstraction:
        return max_free_index(t.body, depth + 1)
    if kind is Application:
        return max(max_free_index(t.fn, depth), max_free_index(t.arg, depth))
    return -1


def is_closed(t: Term) -> bool:
    return max_free_index(t) < 0


def size(t: Term) -> int:
    """Number of atoms (primitives, literals, inventions, variables).

    This is the production count of the term's derivation, which is the
    unit both the grammar description length and the prior operate in.
    """
    kind = type(t)
    if kind is Application:
        return size(t.fn) + size(t.arg)
    if kind is Abstraction:
        return size(t.body)
    return 1


def node_count(t: Term) -> int:
    kind = type(t)
    if kind is Application:
        return 1 + node_count(t.fn) + node_count(t.arg)
    if kind is Abstraction:
        return 1 + node_count(t.body)
    return 1


def subterms(t: Term, path: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], Term, int]]:
    """Yield (path, subterm, binder_depth) in pre-order.

    Path components: 0 descends into an abstraction body or an
    application's function, 1 into an application's argument.
    """
    stack = [(path, t, 0)]
    while stack:
        p, u, d = stack.pop()
        yield p, u, d
        kind = type(u)
        if kind is Application:
            stack.append((p + (1,), u.arg, d))
            stack.append((p + (0,), u.fn, d))
        elif kind is Abstraction:
            stack.append((p + (0,), u.body, d + 1))


def get_at(t: Term, path: tuple[int, ...]) -> Term:
    for step in path:
        kind = type(t)
        if kind is Application:
            t = t.arg if step else t.fn
        elif kind is Abstraction:
            t = t.body
        else:
            raise TermError("path descends past a leaf")
    return t


def replace_at(t: Term, path: tuple[int, ...], replacement: Term) -> Term:
    if not path:
        return replacement
    kind = type(t)
    step, rest = path[0], path[1:]
    if kind is Application:
        if step:
            return Application(t.fn, replace_at(t.arg, rest, replacement))
        return Application(replace_at(t.fn, rest, replacement), t.arg)
    if kind is Abstraction:
        return Abstraction(replace_at(t.body, rest, replacement))
    raise TermError("path descends past a leaf")


def shift(t: Term, by: int, cutoff: int = 0) -> Term:
    kind = type(t)
    if kind is Var:
        if t.index >= cutoff:
            if t.index + by < cutoff:
                raise TermError("shift would capture a variable")
            return Var(t.index + by)
        return t
    if kind is Application:
        return Application(shift(t.fn, by, cutoff), shift(t.arg, by, cutoff))
    if kind is Abstraction:
        return Abstraction(shift(t.body, by, cutoff + 1))
    return t


def substitute(body: Term, value: Term, depth: int = 0) -> Term:
    """Replace Var(depth) in body with value, adjusting indices for the
    removed binder."""
    kind = type(body)
    if kind is Var:
        if body.index == depth:
            return shift(value, depth) if depth else value
        if body.index > depth:
            return Var(body.index - 1)
        return body
    if kind is Application:
        return Application(substitute(body.fn, value, depth), substitute(body.arg, value, depth))
    if kind is Abstraction:
        return Abstraction(substitute(body.body, value, depth + 1))
    return body


def beta_reduce(t: Term, max_steps: int = 10000) -> tuple[Term, bool]:
    """Normal-order reduction to β-normal form, inlining Invented nodes.

    Returns (term, completed). When the step budget runs out the input is
    returned unchanged with completed=False.
    """
    steps = 0
    current = t
    while steps < max_steps:
        reduced = _reduce_once(current)
        if reduced is None:
            return current, True
        current = reduced
        steps += 1
    return t, False


def _reduce_once(t: Term) -> Term | None:
    kind = type(t)
    if kind is Invented:
        return t.body
    if kind is Application:
        fn = t.fn
        if type(fn) is Abstraction:
            return substitute(fn.body, t.arg)
        if type(fn) is Invented:
            return Application(fn.body, t.arg)
        r = _reduce_once(fn)
        if r is not None:
            return Application(r, t.arg)
        r = _reduce_once(t.arg)
        if r is not None:
            return Application(fn, r)
        return None
    if kind is Abstraction:
        r = _reduce_once(t.body)
        return Abstraction(r) if r is not None else None
    return None


def inline_inventions(t: Term) -> Term:
    """Replace every Invented node by its body (without β-reducing)."""
    kind = type(t)
    if kind is Invented:
        return inline_inventions(t.body)
    if kind is Application:
        return Application(inline_inventions(t.fn), inline_inventions(t.arg))
    if kind is Abstraction:
        return Abstraction(inline_inventions(t.body))
    return t


def atoms(t: Term) -> Iterator[Term]:
    """Leaf atoms (primitives, literals, inventions, vars) in pre-order."""
    kind = type(t)
    if kind is Application:
        head, args = application_parse(t)
        yield from atoms(head)
        for a in args:
            yield from atoms(a)
    elif kind is Abstraction:
        yield from atoms(t.body)
    else:
        yield t


def subcomponent_names(t: Term) -> tuple[str, ...]:
    """Multiset (sorted) of base primitive/literal names, inlining inventions."""
    names: list[str] = []
    for a in atoms(inline_inventions(t)):
        if type(a) is not Var:
            names.append(a.name)
    return tuple(sorted(names))
