"""Call-by-value evaluation of terms against a pluggable domain executor.

Evaluation is run-or-fail: any executor error or exceeded limit raises an
EvalError, which searchers treat as "this program does not solve the
task". Results are deterministic functions of (term, args, limit).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Protocol

from .terms import Abstraction, Application, Invented, Literal, Primitive, Term, Var

Value = Any


class EvalError(Exception):
    """Raised for any runtime failure during evaluation."""


class StepLimitExceeded(EvalError):
    pass


class DepthLimitExceeded(EvalError):
    pass


@dataclass(frozen=True)
class EvalLimit:
    max_steps: int = 10000
    max_depth: int = 400

    def __post_init__(self):
        if self.max_steps <= 0 or self.max_depth <= 0:
            raise ValueError("evaluation limits must be strictly positive")


DEFAULT_LIMIT = EvalLimit()


class DomainExecutor(Protocol):
    """Primitive semantics for one domain.

    ``apply_primitive`` receives fully-applied argument values plus a
    ``call`` handle for invoking functional arguments (the handle counts
    evaluation steps, so higher-order primitives respect the limit).
    """

    def arity(self, name: str) -> int: ...

    def apply_primitive(self, name: str, args: tuple, call: Callable[[Value, Value], Value]) -> Value: ...

    def literal_value(self, name: str) -> Value: ...


class _Closure:
    __slots__ = ("body", "env")

    def __init__(self, body: Term, env: tuple):
        self.body = body
        self.env = env


class _PartialPrimitive:
    __slots__ = ("name", "arity", "args")

    def __init__(self, name: str, arity: int, args: tuple):
        self.name = name
        self.arity = arity
        self.args = args


class _Machine:
    __slots__ = ("executor", "limit", "steps")

    def __init__(self, executor: DomainExecutor, limit: EvalLimit):
        self.executor = executor
        self.limit = limit
        self.steps = 0

    def tick(self):
        self.steps += 1
        if self.steps > self.limit.max_steps:
            raise StepLimitExceeded(f"exceeded {self.limit.max_steps} steps")

    def eval(self, t: Term, env: tuple, depth: int) -> Value:
        self.tick()
        if depth > self.limit.max_depth:
            raise DepthLimitExceeded(f"exceeded depth {self.limit.max_depth}")
        kind = type(t)
        if kind is Var:
            try:
                return env[t.index]
            except IndexError:
                raise EvalError(f"unbound variable ${t.index}") from None
        if kind is Literal:
            return self.executor.literal_value(t.name)
        if kind is Primitive:
            arity = self.executor.arity(t.name)
            if arity == 0:
                return self.apply_primitive(t.name, ())
            return _PartialPrimitive(t.name, arity, ())
        if kind is Abstraction:
            return _Closure(t.body, env)
        if kind is Invented:
            return self.eval(t.body, (), depth + 1)
        # Application
        fn = self.eval(t.fn, env, depth + 1)
        arg = self.eval(t.arg, env, depth + 1)
        return self.apply(fn, arg, depth)

    def apply(self, fn: Value, arg: Value, depth: int = 0) -> Value:
        self.tick()
        if depth > self.limit.max_depth:
            raise DepthLimitExceeded(f"exceeded depth {self.limit.max_depth}")
        if isinstance(fn, _Closure):
            return self.eval(fn.body, (arg,) + fn.env, depth + 1)
        if isinstance(fn, _PartialPrimitive):
            args = fn.args + (arg,)
            if len(args) == fn.arity:
                return self.apply_primitive(fn.name, args)
            return _PartialPrimitive(fn.name, fn.arity, args)
        raise EvalError(f"cannot apply non-function value {fn!r}")

    def apply_primitive(self, name: str, args: tuple) -> Value:
        def call(f: Value, x: Value) -> Value:
            return self.apply(f, x)

        try:
            return self.executor.apply_primitive(name, args, call)
        except EvalError:
            raise
        except (ArithmeticError, IndexError, KeyError, TypeError, ValueError) as exc:
            raise EvalError(f"{name}: {exc}") from exc


def evaluate(
    term: Term,
    args: list[Value],
    executor: DomainExecutor,
    limit: EvalLimit = DEFAULT_LIMIT,
) -> Value:
    """Evaluate ``term`` applied to ``args`` left to right."""
    machine = _Machine(executor, limit)
    value = machine.eval(term, (), 0)
    for a in args:
        value = machine.apply(value, a)
    return value
