import math

import pytest

from langsynth.grammar import Grammar, log_prior
from langsynth.search import (
    Frontier,
    FrontierEntry,
    SearchBudget,
    check_task,
    enumerate_programs,
    solve_single_task,
    solve_tasks,
)
from langsynth.domains.base import Task
from langsynth.terms import Literal, Primitive, parse_term, print_term
from langsynth.types import TArrow, TCon

from conftest import arrows


def brute_force_order(grammar, request, terms):
    """Independent oracle: score every complete program with log_prior and
    sort by (-score, print)."""
    scored = [
        (term, log_prior(term, grammar, request)) for term in terms
    ]
    scored.sort(key=lambda x: (-x[1], print_term(x[0])))
    return scored


def all_dag_programs():
    """Every term of type C in the dag grammar, generated by hand."""
    atoms = ["a", "b"]
    fs = [f"(f {x} {y})" for x in atoms for y in atoms]
    return [f"(g {x} {y})" for x in fs for y in fs]


def test_enumeration_matches_brute_force_oracle(dag_grammar):
    C = TCon("C")
    expected_terms = [parse_term(t, literals={"a", "b"}) for t in all_dag_programs()]
    oracle = brute_force_order(dag_grammar, C, expected_terms)
    emitted = list(enumerate_programs(dag_grammar, C, SearchBudget(100000)))
    assert len(emitted) == len(oracle) == 16
    for (term, logp), (oterm, ologp) in zip(emitted, oracle):
        assert term == oterm
        assert logp == ologp


def test_enumeration_completeness_on_finite_space(dag_grammar):
    # request A → C has 81 programs: (lambda (g (f x y) (f z w))) over
    # x,y,z,w in {a, b, $0}
    A, C = TCon("A"), TCon("C")
    emitted = list(enumerate_programs(dag_grammar, arrows(A, C), SearchBudget(10**6)))
    assert len(emitted) == 81
    assert len({print_term(t) for t, _ in emitted}) == 81


def test_enumeration_order_is_sound(strings_grammar, strings_domain):
    scores = [lp for _, lp in enumerate_programs(
        strings_grammar, strings_domain.request_type, SearchBudget(20000)
    )]
    assert all(scores[i] >= scores[i + 1] - 1e-12 for i in range(len(scores) - 1))


def test_first_emitted_is_most_probable(dag_grammar):
    C = TCon("C")
    first_term, first_logp = next(iter(enumerate_programs(dag_grammar, C, SearchBudget(10**5))))
    all_logps = [lp for _, lp in enumerate_programs(dag_grammar, C, SearchBudget(10**5))]
    assert first_logp == max(all_logps)


def test_budget_one_emits_at_most_one(dag_grammar):
    emitted = list(enumerate_programs(dag_grammar, TCon("C"), SearchBudget(1)))
    assert len(emitted) <= 1


def test_enumeration_deterministic(strings_grammar, strings_domain):
    def run():
        return [
            (print_term(t), lp)
            for t, lp in enumerate_programs(
                strings_grammar, strings_domain.request_type, SearchBudget(15000)
            )
        ]

    assert run() == run()


def test_check_task_identity(strings_domain):
    ident = parse_term("(lambda $0)")
    t_same = Task("t", strings_domain.request_type, [("ab", "ab"), ("x", "x")])
    t_diff = Task("t", strings_domain.request_type, [("ab", "ab"), ("x", "y")])
    assert check_task(ident, t_same, strings_domain)
    assert not check_task(ident, t_diff, strings_domain)


def test_check_task_error_counts_as_failure(strings_domain):
    # car of the empty split errors on the empty-string example
    prog = parse_term(
        "(lambda (flatten (cdr (regexsplit dot $0))))",
        literals=strings_domain.literal_names,
    )
    bad = Task("t", strings_domain.request_type, [("ab", "b")] * 6 + [("", "")])
    good = Task("t", strings_domain.request_type, [("ab", "b"), ("xyz", "yz")])
    assert not check_task(prog, bad, strings_domain)
    assert check_task(prog, good, strings_domain)


def test_solve_tasks_finds_small_program(strings_domain, strings_grammar):
    gen = strings_domain.generate_tasks(1, seed=21, examples_per_task=8)
    task = gen[0].task
    # remove-first is reachable from the uniform prior
    task_easy = Task(
        "easy",
        strings_domain.request_type,
        [(x, x[1:]) for x, _ in task.examples],
        description=["remove", "the", "first", "letter"],
    )
    frontier = solve_single_task(
        task_easy, strings_grammar, SearchBudget(150000), 3, strings_domain
    )
    assert not frontier.empty
    for e in frontier.entries:
        assert check_task(e.program, task_easy, strings_domain)
        assert e.log_posterior == e.log_prior


def test_solve_tasks_beam_and_order(strings_domain, strings_grammar):
    task = Task(
        "identityish",
        strings_domain.request_type,
        [("ab", "ab"), ("qrs", "qrs")],
    )
    frontier = solve_single_task(task, strings_grammar, SearchBudget(60000), 4, strings_domain)
    assert 0 < len(frontier.entries) <= 4
    posts = [e.log_posterior for e in frontier.entries]
    assert posts == sorted(posts, reverse=True)


def test_unsolvable_task_gives_empty_frontier(strings_domain, strings_grammar):
    impossible = Task(
        "impossible",
        strings_domain.request_type,
        [("ab", "xy"), ("ab", "yz")],  # inconsistent examples
    )
    frontier = solve_single_task(impossible, strings_grammar, SearchBudget(3000), 3, strings_domain)
    assert frontier.empty


def test_solve_tasks_parallel_matches_sequential(strings_domain, strings_grammar):
    tasks = [
        Task(f"t{i}", strings_domain.request_type, [("ab", "ab"), ("cd", "cd")])
        for i in range(3)
    ]
    dists = [strings_grammar] * 3
    budget = SearchBudget(5000)
    seq = solve_tasks(tasks, dists, budget, 2, strings_domain, workers=1)
    par = solve_tasks(tasks, dists, budget, 2, strings_domain, workers=2)
    for a, b in zip(seq, par):
        assert [print_term(e.program) for e in a.entries] == [
            print_term(e.program) for e in b.entries
        ]
        assert [e.log_prior for e in a.entries] == [e.log_prior for e in b.entries]


def test_frontier_merge_dedupes_and_keeps_beam():
    T = TCon("T")
    p1 = FrontierEntry(Literal("a"), -1.0, -1.0)
    p2 = FrontierEntry(Literal("b"), -2.0, -2.0)
    f1 = Frontier("t", T, [p1], 2)
    f2 = Frontier("t", T, [p1, p2], 2)
    merged = f1.merged_with(f2)
    assert len(merged.entries) == 2
    assert merged.best().program == Literal("a")
