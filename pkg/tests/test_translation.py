import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from langsynth.grammar import Grammar, Production
from langsynth.terms import Primitive, parse_term, print_term
from langsynth.types import TCon
from langsynth.translation import (
    AlignmentRecord,
    SmoothedLM,
    TranslationParams,
    TranslationTable,
    apply_mutual_exclusivity,
    delinearize,
    generate_description,
    linearize,
    primitive_tokens,
    refactored_description_length,
    score_description,
    train_em,
    translation_description_length,
)

HAND_PAIRS = [(["a"], ["x"]), (["a", "b"], ["x", "y"])]


def hand_em_two_iterations() -> dict:
    """Exact rational-arithmetic EM on the two-pair corpus."""
    t = {("a", "x"): Fraction(1, 2), ("a", "y"): Fraction(1, 2),
         ("b", "x"): Fraction(1, 2), ("b", "y"): Fraction(1, 2)}
    for _ in range(2):
        counts: dict = {}
        totals: dict = {}
        counts[("a", "x")] = Fraction(1)
        totals["a"] = Fraction(1)
        for w in ("x", "y"):
            denom = t[("a", w)] + t[("b", w)]
            for l in ("a", "b"):
                share = t[(l, w)] / denom
                counts[(l, w)] = counts.get((l, w), Fraction(0)) + share
                totals[l] = totals.get(l, Fraction(0)) + share
        t = {k: v / totals[k[0]] for k, v in counts.items()}
    return t


def test_em_matches_hand_computation():
    table = train_em(HAND_PAIRS, TranslationParams(em_iterations=2))
    hand = hand_em_two_iterations()
    assert abs(table.word_given_prim[("a", "x")] - float(hand[("a", "x")])) < 1e-12
    assert table.word_given_prim[("a", "x")] > table.word_given_prim[("a", "y")]


def test_em_log_likelihood_non_decreasing():
    table = train_em(HAND_PAIRS, TranslationParams(em_iterations=10))
    lls = table.log_likelihoods
    assert len(lls) == 10
    assert all(lls[i + 1] >= lls[i] - 1e-12 for i in range(len(lls) - 1))


def test_em_forced_alignment():
    table = train_em([(["polygon_fn"], ["gon"])], TranslationParams(em_iterations=3))
    assert table.word_given_prim[("polygon_fn", "gon")] == 1.0


def test_em_normalization_invariant():
    table = train_em(
        [(["p", "q"], ["u", "v"]), (["p"], ["u"]), (["q", "r"], ["v", "w"])],
        TranslationParams(em_iterations=6),
    )
    for l in ("p", "q", "r"):
        row = sum(p for (l2, _), p in table.word_given_prim.items() if l2 == l)
        assert abs(row - 1.0) < 1e-9
    for w in ("u", "v", "w"):
        col = sum(p for (_, w2), p in table.prim_given_word.items() if w2 == w)
        assert abs(col - 1.0) < 1e-9


def two_prim_grammar(p_high=0.9, p_low=0.1):
    T = TCon("T")
    return Grammar(
        [
            Production(Primitive("hi"), T, math.log(p_high)),
            Production(Primitive("lo"), T, math.log(p_low)),
        ]
    )


def test_me_argmax_is_low_prior_primitive():
    table = train_em([(["hi"], ["seen"])], TranslationParams())
    updated = apply_mutual_exclusivity(table, two_prim_grammar(), {"brandnew"}, alpha=0.1)
    assert updated.prim_given_word[("lo", "brandnew")] > updated.prim_given_word[("hi", "brandnew")]
    # hand computation: mass ∝ 1/0.9 vs 1/0.1, normalized per word
    expect_lo = (1 / 0.1) / (1 / 0.1 + 1 / 0.9)
    assert abs(updated.prim_given_word[("lo", "brandnew")] - expect_lo) < 1e-9


def test_me_uniform_prior_gives_uniform_pseudocounts():
    table = train_em([(["hi"], ["seen"])], TranslationParams())
    g = two_prim_grammar(0.5, 0.5)
    updated = apply_mutual_exclusivity(table, g, {"brandnew"}, alpha=0.1)
    assert abs(
        updated.prim_given_word[("lo", "brandnew")]
        - updated.prim_given_word[("hi", "brandnew")]
    ) < 1e-12


def test_me_requires_disjoint_vocab():
    table = train_em([(["hi"], ["seen"])], TranslationParams())
    with pytest.raises(ValueError):
        apply_mutual_exclusivity(table, two_prim_grammar(), {"seen"}, alpha=0.1)


def test_me_renormalizes_tables():
    table = train_em([(["hi", "lo"], ["seen", "also"])], TranslationParams(em_iterations=4))
    updated = apply_mutual_exclusivity(table, two_prim_grammar(), {"w1", "w2"}, alpha=0.1)
    for l in ("hi", "lo"):
        row = sum(p for (l2, _), p in updated.word_given_prim.items() if l2 == l)
        assert abs(row - 1.0) < 1e-9


def test_linearize_flat_application():
    t = parse_term("(f a b)")
    assert linearize(t) == ["f", "a", "b"]


def test_linearize_lambda_marker():
    t = parse_term("(lambda (f $0))")
    assert linearize(t) == ["λ", "f", "$0"]


def test_linearize_round_trip_random_samples(strings_grammar, strings_domain):
    import numpy as np

    rng = np.random.default_rng(5)
    count = 0
    for _ in range(1000):
        term = strings_grammar.sample(strings_domain.request_type, rng, max_depth=6)
        if term is None:
            continue
        tokens = linearize(term)
        back = delinearize(tokens, strings_domain.arity, literals=strings_domain.literal_names)
        assert back == term
        count += 1
    assert count > 500


def test_score_description_empty_is_zero(strings_grammar):
    t = parse_term("(lambda $0)")
    table = TranslationTable()
    assert score_description([], t, table) == 0.0


def test_score_description_probability_one_table():
    t = parse_term("(f a)")
    table = TranslationTable(word_given_prim={("f", "w"): 1.0, ("a", "w"): 1.0})
    assert score_description(["w", "w", "w"], t, table) == 0.0


def test_score_description_monotone_in_words():
    t = parse_term("(f a)")
    table = train_em([(primitive_tokens(t), ["small", "word"])], TranslationParams())
    base = score_description(["small"], t, table)
    more = score_description(["small", "word"], t, table)
    assert more < base < 0 or (base <= 0 and more < base)


def test_generate_deterministic_and_degenerate():
    table = TranslationTable(word_given_prim={("f", "eff"): 1.0, ("g", "gee"): 1.0})
    lm = SmoothedLM([["eff", "gee"]])
    prog = parse_term("(lambda (f (g $0)))")
    assert generate_description(prog, table, lm, mode="greedy") == ["eff", "gee"]
    s1 = generate_description(prog, table, lm, mode="sample", seed=3)
    s2 = generate_description(prog, table, lm, mode="sample", seed=3)
    assert s1 == s2


def test_generate_skips_tokens_without_words():
    table = TranslationTable(word_given_prim={("f", "eff"): 1.0})
    prog = parse_term("(lambda (f (g $0)))")
    assert generate_description(prog, table, None, mode="greedy") == ["eff"]


def test_translation_dl_matches_direct_computation():
    pairs = [(["f", "g"], ["fog"]), (["f"], ["eff"]), (["g", "h"], ["geh", "aitch"])]
    table = train_em(pairs, TranslationParams(em_iterations=5))
    direct = 0.0
    for record in table.alignments:
        for i, j in record.links:
            p = table.word_given_prim[(record.program_tokens[i], record.description_tokens[j])]
            direct += -math.log(max(p, 1e-7))
    assert abs(translation_description_length(table) - direct) < 1e-12


def test_translation_dl_zero_for_deterministic_table():
    table = TranslationTable(word_given_prim={("f", "w"): 1.0})
    table.alignments = [AlignmentRecord(["f"], ["w"], frozenset({(0, 0)}))]
    assert translation_description_length(table) == 0.0


def test_translation_dl_entropy_monotonicity():
    # one word split across two primitives costs more than concentrated
    split = TranslationTable(word_given_prim={("f", "w"): 0.5, ("g", "w"): 0.5})
    split.alignments = [AlignmentRecord(["f", "g"], ["w"], frozenset({(0, 0), (1, 0)}))]
    conc = TranslationTable(word_given_prim={("f", "w"): 1.0, ("g", "other"): 1.0})
    conc.alignments = [AlignmentRecord(["f", "g"], ["w"], frozenset({(0, 0)}))]
    assert translation_description_length(split) > translation_description_length(conc)


def refactor_table():
    table = TranslationTable(
        word_given_prim={("f", "w"): 0.5, ("g", "w"): 0.5, ("h", "w"): 1.0}
    )
    table.alignments = [AlignmentRecord(["f", "g", "h"], ["w"], frozenset({(0, 0), (1, 0)}))]
    return table


def test_refactored_dl_collapses_exact_subset():
    table = refactor_table()
    base = translation_description_length(table)
    collapsed = refactored_description_length(table, ("f", "g"))
    assert collapsed < base
    # collapsed cost is the cheapest of the merged links
    assert abs(collapsed - (-math.log(0.5))) < 1e-12


def test_refactored_dl_unchanged_when_not_subset():
    table = refactor_table()
    base = translation_description_length(table)
    # candidate contains h which the word is not aligned to
    assert refactored_description_length(table, ("f", "g", "h")) == base


def test_refactored_dl_unchanged_for_unrelated_candidate():
    table = refactor_table()
    base = translation_description_length(table)
    assert refactored_description_length(table, ("p", "q")) == base


def test_refactored_never_exceeds_baseline():
    pairs = [(["f", "g", "h"], ["w1", "w2"]), (["f", "g"], ["w1"])]
    table = train_em(pairs, TranslationParams(em_iterations=4))
    base = translation_description_length(table)
    for sub in (("f", "g"), ("g", "h"), ("f", "h"), ("f", "g", "h")):
        assert refactored_description_length(table, sub) <= base + 1e-12


def test_table_checkpoint_round_trip():
    table = train_em(HAND_PAIRS, TranslationParams(em_iterations=4))
    text = table.save_text()
    assert text.splitlines()[0].startswith("langsynth-translation")
    loaded = TranslationTable.load_text(text)
    for key, p in table.word_given_prim.items():
        assert abs(loaded.word_given_prim[key] - p) < 1e-9
    # rows carry fixed 9-decimal precision
    sample_row = text.splitlines()[1].split("\t")
    assert len(sample_row[2].split(".")[1]) == 9


def test_smoothed_lm_normalized():
    lm = SmoothedLM([["a", "b"], ["a", "c"]], k=0.1)
    for prev in ("a", "b", SmoothedLM.BOS):
        total = sum(math.exp(lm.log_prob(w, prev)) for w in lm.vocab)
        assert abs(total - 1.0) < 1e-9
