import sys

import pytest

sys.setrecursionlimit(20000)

from langsynth.domains import get_domain
from langsynth.grammar import Grammar
from langsynth.terms import Literal, Primitive
from langsynth.types import TArrow, TCon


def arrows(*ts):
    result = ts[-1]
    for t in reversed(ts[:-1]):
        result = TArrow(t, result)
    return result


@pytest.fixture(scope="session")
def strings_domain():
    return get_domain("strings")


@pytest.fixture(scope="session")
def graphics_domain():
    return get_domain("graphics")


@pytest.fixture(scope="session")
def strings_grammar(strings_domain):
    return strings_domain.base_grammar()


@pytest.fixture(scope="session")
def graphics_grammar(graphics_domain):
    return graphics_domain.base_grammar()


@pytest.fixture()
def dag_grammar():
    """Finite typed space: programs of type C are g (f x y) (f z w)."""
    A, B, C = TCon("A"), TCon("B"), TCon("C")
    return Grammar.uniform(
        [
            (Literal("a"), A),
            (Literal("b"), A),
            (Primitive("f"), arrows(A, A, B)),
            (Primitive("g"), arrows(B, B, C)),
        ]
    )
