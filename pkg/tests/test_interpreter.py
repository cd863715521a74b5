import pytest

from langsynth.interpreter import (
    DepthLimitExceeded,
    EvalError,
    EvalLimit,
    StepLimitExceeded,
    evaluate,
)
from langsynth.terms import parse_term


def test_limits_must_be_positive():
    with pytest.raises(ValueError):
        EvalLimit(max_steps=0)
    with pytest.raises(ValueError):
        EvalLimit(max_depth=0)


def test_identity_on_string(strings_domain):
    t = parse_term("(lambda $0)")
    assert evaluate(t, ["abc"], strings_domain) == "abc"


def test_cdr_primitive(strings_domain):
    t = parse_term("(lambda (cdr $0))")
    assert evaluate(t, [["a", "b"]], strings_domain) == ["b"]


def test_car_of_empty_is_runtime_error(strings_domain):
    t = parse_term("(lambda (car $0))")
    with pytest.raises(EvalError):
        evaluate(t, [[]], strings_domain)


def test_evaluate_is_pure(strings_domain):
    t = parse_term(
        "(lambda (flatten (cdr (regexsplit dot $0))))",
        literals=strings_domain.literal_names,
    )
    results = {evaluate(t, ["hello"], strings_domain) for _ in range(5)}
    assert results == {"ello"}


def test_step_limit_on_nested_loops(graphics_domain):
    from langsynth.domains.graphics import initial_state

    # 9^3 = 729 iterations of a drawing move exceeds a small step limit.
    t = parse_term(
        "(lambda (for 9 (lambda (for 9 (lambda (for 9 (lambda (move unit_line"
        " unit_angle $0)) $0)) $0)) $0))",
        literals=graphics_domain.literal_names,
    )
    with pytest.raises(StepLimitExceeded):
        evaluate(t, [initial_state()], graphics_domain, EvalLimit(max_steps=2000))
    # and succeeds with a generous limit
    out = evaluate(t, [initial_state()], graphics_domain, EvalLimit(max_steps=50000))
    assert out.strokes == 729


def test_depth_limit(strings_domain):
    deep = "$0"
    for _ in range(80):
        deep = f"(cdr {deep})"
    t = parse_term(f"(lambda {deep})")
    with pytest.raises((DepthLimitExceeded, EvalError)):
        evaluate(t, [["x"]], strings_domain, EvalLimit(max_steps=100000, max_depth=50))


def test_higher_order_map(strings_domain):
    t = parse_term(
        "(lambda (map (lambda (rconcat $0 $0)) $0))", literals=strings_domain.literal_names
    )
    assert evaluate(t, [["ab", "c"]], strings_domain) == ["abab", "cc"]
