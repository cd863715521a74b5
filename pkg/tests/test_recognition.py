import numpy as np
import pytest

from langsynth.domains.base import Task
from langsynth.grammar import log_prior
from langsynth.recognition import (
    LANG_DIM,
    BigramTensor,
    RecognitionGrammar,
    RecognitionModel,
    encode_language,
    encode_task,
    make_joint_sampler,
    predict,
    sample_joint,
    train,
)
from langsynth.search import (
    Frontier,
    FrontierEntry,
    SearchBudget,
    check_task,
    enumerate_programs,
)
from langsynth.terms import parse_term, print_term
from langsynth.translation import SmoothedLM, TranslationParams, train_em, linearize


@pytest.fixture(scope="module")
def setup(strings_domain):
    grammar = strings_domain.base_grammar()
    gen = strings_domain.generate_tasks(6, seed=17, examples_per_task=10)
    vocab = {w for gt in gen for w in gt.task.description}
    model = RecognitionModel(grammar, strings_domain, seed=11, vocab=vocab)
    return grammar, gen, model


def test_tensor_shape_tracks_grammar(setup, strings_domain):
    grammar, gen, model = setup
    t = predict(model, gen[0].task, strings_domain, gen[0].task.description, grammar=grammar)
    assert t.logits.shape == (len(grammar) + 1, len(grammar) + 2, grammar.max_arity)
    # after a library change, a fresh model tracks the new shape
    body = parse_term(
        "(lambda (flatten (regexsplit dot $0)))", literals=strings_domain.literal_names
    )
    g2 = grammar.add_invented("fn_0", body, grammar.infer_type(body))
    model2 = RecognitionModel(g2, strings_domain, seed=11)
    t2 = model2.predict_tensor(gen[0].task, strings_domain)
    assert t2.logits.shape == (len(g2) + 1, len(g2) + 2, g2.max_arity)


def test_version_mismatch_raises(setup, strings_domain):
    grammar, gen, model = setup
    g2 = grammar.with_weights([p.log_weight for p in grammar.productions], 0.0)
    with pytest.raises(ValueError):
        predict(model, gen[0].task, strings_domain, None, grammar=g2)


def test_encode_task_deterministic_and_sensitive(setup, strings_domain):
    grammar, gen, model = setup
    a = encode_task(model, gen[0].task, strings_domain)
    b = encode_task(model, gen[0].task, strings_domain)
    assert np.array_equal(a, b)
    examples = list(gen[0].task.examples)
    x, y = examples[0]
    changed = Task("changed", gen[0].task.request, [(x, y + "q")] + examples[1:])
    c = encode_task(model, changed, strings_domain)
    assert not np.array_equal(a, c)


def test_encode_language_empty_is_zero(setup):
    _, _, model = setup
    assert np.array_equal(model.language_features([]), np.zeros(LANG_DIM))


def test_encode_language_permutation_changes_only_bigrams(setup):
    _, _, model = setup
    a = model.language_features(["remove", "all", "b"])
    b = model.language_features(["b", "all", "remove"])
    uni = slice(0, 128)
    assert np.array_equal(a[uni], b[uni])
    assert not np.array_equal(a[128:], b[128:])


def test_encode_language_disjoint_tokens_orthogonal(setup):
    _, _, model = setup
    a = model.language_features(["remove", "all"])
    b = model.language_features(["double", "every"])
    # hash buckets are wide enough that these toy tokens do not collide
    assert float(a @ b) == 0.0


def test_zero_initialized_model_is_uniform(setup, strings_domain):
    grammar, gen, model = setup
    fresh = RecognitionModel(grammar, strings_domain, seed=0)
    tensor = fresh.predict_tensor(gen[0].task, strings_domain)
    rg = RecognitionGrammar(grammar, tensor)
    guided = [
        print_term(t)
        for t, _ in enumerate_programs(rg, strings_domain.request_type, SearchBudget(4000))
    ]
    prior = [
        print_term(t)
        for t, _ in enumerate_programs(grammar, strings_domain.request_type, SearchBudget(4000))
    ]
    assert guided == prior


def test_predict_deterministic(setup, strings_domain):
    grammar, gen, model = setup
    a = predict(model, gen[0].task, strings_domain, gen[0].task.description, grammar=grammar)
    b = predict(model, gen[0].task, strings_domain, gen[0].task.description, grammar=grammar)
    assert np.array_equal(a.logits, b.logits)


def test_gradients_match_finite_differences(setup, strings_domain):
    grammar, gen, model = setup
    rng = np.random.default_rng(3)
    m = RecognitionModel(grammar, strings_domain, seed=5, vocab=model.vocab)
    for name in m.PARAM_NAMES:
        m.params[name] = rng.normal(0, 0.05, m.params[name].shape)
    gt = gen[0]
    tf = m.task_features(gt.task, strings_domain)
    lf = m.language_features(gt.task.description)
    records = m.derivation_records(gt.program, gt.task.request)
    _, grads = m.loss_and_gradients(tf, lf, records)
    h = 1e-6
    for name in m.PARAM_NAMES:
        arr = m.params[name]
        if name in ("out_b", "out_w"):
            idxs, vals = grads[name]
            dense = np.zeros_like(arr)
            np.add.at(dense, idxs, vals)
        else:
            dense = grads[name]
        flat, gflat = arr.ravel(), dense.ravel()
        for _ in range(5):
            i = int(rng.integers(0, flat.size))
            orig = flat[i]
            flat[i] = orig + h
            up = m.loss_only(tf, lf, records)
            flat[i] = orig - h
            down = m.loss_only(tf, lf, records)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            if abs(fd) < 1e-8 and abs(gflat[i]) < 1e-8:
                continue
            rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]))
            assert rel < 1e-4, (name, rel)


def test_overfit_single_example(setup, strings_domain):
    grammar, gen, model = setup
    gt = gen[0]
    lp = log_prior(gt.program, grammar, gt.task.request)
    fronts = [Frontier(gt.task.id, gt.task.request, [FrontierEntry(gt.program, lp, lp)], 5)]
    m = RecognitionModel(grammar, strings_domain, seed=2, vocab=model.vocab)
    m = train(
        m, fronts, {gt.task.id: gt.task}, strings_domain,
        joint_sampler=None, steps=2000, seed=4, learning_rate=0.05,
    )
    tf = m.task_features(gt.task, strings_domain)
    lf = m.language_features(gt.task.description)
    records = m.derivation_records(gt.program, gt.task.request)
    assert m.loss_only(tf, lf, records) < 0.01


def test_train_deterministic(setup, strings_domain):
    grammar, gen, model = setup
    fronts = []
    tasks = {}
    for gt in gen[:3]:
        lp = log_prior(gt.program, grammar, gt.task.request)
        fronts.append(Frontier(gt.task.id, gt.task.request, [FrontierEntry(gt.program, lp, lp)], 5))
        tasks[gt.task.id] = gt.task

    def one():
        m = RecognitionModel(grammar, strings_domain, seed=2, vocab=model.vocab)
        m = train(m, fronts, tasks, strings_domain, steps=150, seed=9)
        return m.params["out_b"].copy()

    assert np.array_equal(one(), one())


def test_language_monotonicity_after_training(setup, strings_domain):
    grammar, gen, model = setup
    # planted toy corpus: the cue word "doubled" marks programs headed by
    # rconcat doubling; "nothing" marks the identity split
    lits = strings_domain.literal_names
    double = parse_term(
        "(lambda (flatten (map (lambda (rconcat $0 $0)) (regexsplit dot $0))))",
        literals=lits,
    )
    ident = parse_term("(lambda (flatten (regexsplit dot $0)))", literals=lits)
    tasks = {}
    fronts = []
    for i in range(6):
        word = "doubled" if i % 2 == 0 else "nothing"
        prog = double if i % 2 == 0 else ident
        examples = [(s, "".join(ch * 2 for ch in s)) if i % 2 == 0 else (s, s)
                    for s in (f"ab{i}", f"cd{i}")]
        t = Task(f"toy{i}", strings_domain.request_type, examples, description=[word])
        lp = log_prior(prog, grammar, t.request)
        tasks[t.id] = t
        fronts.append(Frontier(t.id, t.request, [FrontierEntry(prog, lp, lp)], 5))
    m = RecognitionModel(grammar, strings_domain, seed=1, vocab={"doubled", "nothing"})
    m = train(m, fronts, tasks, strings_domain, steps=1500, seed=3)
    probe = tasks["toy0"]
    with_cue = m.predict_tensor(probe, strings_domain, ["doubled"])
    without = m.predict_tensor(probe, strings_domain, None)
    rg_with = RecognitionGrammar(grammar, with_cue)
    rg_without = RecognitionGrammar(grammar, without)
    from langsynth.types import TypeContext, canonicalize

    def root_prob(rg, name):
        ctx = TypeContext()
        request = ctx.instantiate(canonicalize(strings_domain.request_type))
        # walk through the λ wrapper to the fullstr hole
        request = request.right
        env = (canonicalize(strings_domain.request_type).left,)
        for node, key, lp, _, _ in rg.expansions(request, env, ctx, rg.grammar.root_key, 0):
            if getattr(node, "name", None) == name:
                return lp
        return float("-inf")

    assert root_prob(rg_with, "flatten") >= root_prob(rg_without, "flatten") - 1e-9


def test_sample_joint_properties(setup, strings_domain):
    grammar, gen, model = setup
    samples = sample_joint(grammar, None, None, strings_domain, 8, seed=21)
    assert samples
    for task, description, program in samples:
        assert check_task(program, task, strings_domain)
    again = sample_joint(grammar, None, None, strings_domain, 8, seed=21)
    assert [print_term(p) for _, _, p in samples] == [print_term(p) for _, _, p in again]


def test_sample_joint_descriptions_use_known_vocab(setup, strings_domain):
    grammar, gen, model = setup
    from langsynth.grammar import fit_weights

    fronts = []
    for gt in gen:
        lp = log_prior(gt.program, grammar, gt.task.request)
        fronts.append(Frontier(gt.task.id, gt.task.request, [FrontierEntry(gt.program, lp, lp)], 5))
    fitted = fit_weights(grammar, fronts, pseudocounts=0.5)
    pairs = [(linearize(gt.program), gt.task.description) for gt in gen]
    table = train_em(pairs, TranslationParams(em_iterations=5))
    lm = SmoothedLM([gt.task.description for gt in gen])
    samples = sample_joint(fitted, table, lm, strings_domain, 20, seed=5)
    assert samples
    with_known = sum(
        1 for _, d, _ in samples if d and any(w in table.vocab_known for w in d)
    )
    assert with_known >= len(samples) * 0.5
