"""Amortized conditional inference: a small trainable network mapping
task examples (and optionally a description) to a bigram transition
tensor over the current library, which reweights enumeration.

Encoders are deterministic feature maps (character statistics for
strings, raster statistics for graphics, hashed token/bigram counts for
language) followed by trainable linear projections into 64 dimensions.
The trunk is a 2-layer tanh MLP; the output layer starts at zero so an
untrained model predicts uniform distributions over type-legal children.
All gradients are computed in closed form and are checked against finite
differences in the tests.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .grammar import Grammar, ROOT_SLOT
from .interpreter import EvalError, evaluate
from .terms import Term, print_term
from .translation import SmoothedLM, TranslationTable, generate_description

EMBED = 64
LANG_UNIGRAM_BUCKETS = 128
LANG_BIGRAM_BUCKETS = 128
LANG_DIM = LANG_UNIGRAM_BUCKETS + LANG_BIGRAM_BUCKETS
UNK = "<unk>"


def _bucket(token: str, buckets: int) -> int:
    return zlib.crc32(token.encode()) % buckets


@dataclass
class BigramTensor:
    logits: np.ndarray          # (|L|+1) x (|L|+2) x A
    grammar_version: int
    arity: int

    def __post_init__(self):
        if not np.isfinite(self.logits).all():
            raise ValueError("bigram tensor contains non-finite entries")


class RecognitionModel:
    """Trainable conditional model tied to one grammar version."""

    PARAM_NAMES = ("task_proj", "lang_proj", "w1", "b1", "w2", "b2", "out_w", "out_b")

    def __init__(self, grammar: Grammar, domain, seed: int = 0, vocab=()):
        self.domain_name = domain.name
        self.grammar = grammar
        self.grammar_version = grammar.version
        self.seed = seed
        self.vocab = frozenset(vocab)
        self.n_productions = len(grammar.productions)
        self.arity = grammar.max_arity
        self.n_parents = self.n_productions + 1
        self.n_children = self.n_productions + 2
        self.tensor_size = self.n_parents * self.n_children * self.arity
        task_dim = domain.feature_dim
        rng = np.random.default_rng(seed)
        scale = lambda fan_in: 1.0 / math.sqrt(max(1, fan_in))
        self.params: dict[str, np.ndarray] = {
            "task_proj": rng.normal(0, scale(task_dim), (EMBED, task_dim)),
            "lang_proj": rng.normal(0, scale(LANG_DIM), (EMBED, LANG_DIM)),
            "w1": rng.normal(0, scale(2 * EMBED), (EMBED, 2 * EMBED)),
            "b1": np.zeros(EMBED),
            "w2": rng.normal(0, scale(EMBED), (EMBED, EMBED)),
            "b2": np.zeros(EMBED),
            "out_w": np.zeros((self.tensor_size, EMBED)),
            "out_b": np.zeros(self.tensor_size),
        }
        self._derivation_cache: dict[str, list] = {}
        self._feature_cache: dict[str, np.ndarray] = {}

    # ------------------------------------------------------------------
    # Encoders
    # ------------------------------------------------------------------

    def task_features(self, task, domain) -> np.ndarray:
        cached = self._feature_cache.get(task.id)
        if cached is None:
            cached = np.asarray(domain.task_features(task), dtype=float)
            self._feature_cache[task.id] = cached
        return cached

    def language_features(self, tokens) -> np.ndarray:
        feats = np.zeros(LANG_DIM)
        if not tokens:
            return feats
        mapped = [t if t in self.vocab else UNK for t in tokens]
        for t in mapped:
            feats[_bucket(t, LANG_UNIGRAM_BUCKETS)] += 1.0
        for a, b in zip(mapped, mapped[1:]):
            feats[LANG_UNIGRAM_BUCKETS + _bucket(a + "|" + b, LANG_BIGRAM_BUCKETS)] += 1.0
        return feats

    def encode_task(self, task, domain) -> np.ndarray:
        vec = self.params["task_proj"] @ self.task_features(task, domain)
        if not np.isfinite(vec).all():
            raise ValueError("non-finite task encoding")
        return vec

    def encode_language(self, tokens) -> np.ndarray:
        vec = self.params["lang_proj"] @ self.language_features(tokens)
        if not np.isfinite(vec).all():
            raise ValueError("non-finite language encoding")
        return vec

    # ------------------------------------------------------------------
    # Forward / backward
    # ------------------------------------------------------------------

    def _forward(self, task_feat: np.ndarray, lang_feat: np.ndarray):
        p = self.params
        e_task = p["task_proj"] @ task_feat
        e_lang = p["lang_proj"] @ lang_feat
        x = np.concatenate([e_task, e_lang])
        h1 = np.tanh(p["w1"] @ x + p["b1"])
        h2 = np.tanh(p["w2"] @ h1 + p["b2"])
        logits = p["out_w"] @ h2 + p["out_b"]
        return x, h1, h2, logits

    def predict_tensor(self, task, domain, description=None) -> BigramTensor:
        task_feat = self.task_features(task, domain)
        lang_feat = (
            self.language_features(description) if description else np.zeros(LANG_DIM)
        )
        _, _, _, logits = self._forward(task_feat, lang_feat)
        return BigramTensor(
            logits.reshape(self.n_parents, self.n_children, self.arity).copy(),
            self.grammar_version,
            self.arity,
        )

    def _flat_index(self, parent: int, child: int, slot: int) -> int:
        return (parent * self.n_children + child) * self.arity + slot

    def derivation_records(self, program: Term, request) -> list:
        key = print_term(program) + "@" + str(request)
        records = self._derivation_cache.get(key)
        if records is None:
            steps = self.grammar.derivation_steps(program, request)
            records = []
            for s in steps:
                parent = min(s.parent_key, self.n_productions)
                legal = np.array([self._flat_index(parent, k, s.slot) for k in s.legal_keys])
                chosen_pos = s.legal_keys.index(s.chosen_key)
                records.append((legal, chosen_pos, s.n_vars if s.var_chosen else 0))
            self._derivation_cache[key] = records
        return records

    def loss_and_gradients(self, task_feat, lang_feat, records):
        x, h1, h2, logits = self._forward(task_feat, lang_feat)
        loss = 0.0
        dflat: dict[int, float] = {}
        for legal, chosen_pos, n_vars in records:
            slice_logits = logits[legal]
            m = slice_logits.max()
            exps = np.exp(slice_logits - m)
            z = exps.sum()
            log_z = m + math.log(z)
            loss += log_z - slice_logits[chosen_pos]
            if n_vars:
                loss += math.log(n_vars)
            probs = exps / z
            for idx, pr in zip(legal, probs):
                dflat[int(idx)] = dflat.get(int(idx), 0.0) + float(pr)
            dflat[int(legal[chosen_pos])] -= 1.0
        idxs = np.fromiter(dflat.keys(), dtype=int, count=len(dflat))
        vals = np.fromiter(dflat.values(), dtype=float, count=len(dflat))
        p = self.params
        grads: dict[str, object] = {}
        grads["out_b"] = (idxs, vals)
        grads["out_w"] = (idxs, vals[:, None] * h2[None, :])
        dh2 = p["out_w"][idxs].T @ vals
        dz2 = dh2 * (1.0 - h2 * h2)
        grads["w2"] = np.outer(dz2, h1)
        grads["b2"] = dz2
        dh1 = p["w2"].T @ dz2
        dz1 = dh1 * (1.0 - h1 * h1)
        grads["w1"] = np.outer(dz1, x)
        grads["b1"] = dz1
        dx = p["w1"].T @ dz1
        grads["task_proj"] = np.outer(dx[:EMBED], task_feat)
        grads["lang_proj"] = np.outer(dx[EMBED:], lang_feat)
        return loss, grads

    def loss_only(self, task_feat, lang_feat, records) -> float:
        _, _, _, logits = self._forward(task_feat, lang_feat)
        loss = 0.0
        for legal, chosen_pos, n_vars in records:
            slice_logits = logits[legal]
            m = slice_logits.max()
            log_z = m + math.log(np.exp(slice_logits - m).sum())
            loss += log_z - slice_logits[chosen_pos]
            if n_vars:
                loss += math.log(n_vars)
        return loss

    def apply_gradients(self, grads, lr: float) -> None:
        p = self.params
        for name in ("w1", "b1", "w2", "b2", "task_proj", "lang_proj"):
            p[name] -= lr * grads[name]
        idxs, db = grads["out_b"]
        np.subtract.at(p["out_b"], idxs, lr * db)
        idxs, dw = grads["out_w"]
        p["out_w"][idxs] -= lr * dw

    # ------------------------------------------------------------------
    # Checkpointing
    # ------------------------------------------------------------------

    def save_text(self) -> str:
        lines = [
            "langsynth-recognition 1",
            f"domain\t{self.domain_name}",
            f"grammar_version\t{self.grammar_version}",
            f"seed\t{self.seed}",
            f"vocab\t{' '.join(sorted(self.vocab))}",
        ]
        for name in self.PARAM_NAMES:
            arr = self.params[name]
            shape = ",".join(str(d) for d in arr.shape)
            values = " ".join(f"{v:.9e}" for v in arr.ravel())
            lines.append(f"param\t{name}\t{shape}\t{values}")
        return "\n".join(lines) + "\n"

    def load_params_text(self, text: str) -> None:
        for line in text.splitlines():
            if line.startswith("param\t"):
                _, name, shape, values = line.split("\t")
                dims = tuple(int(d) for d in shape.split(","))
                arr = np.array([float(v) for v in values.split()])
                self.params[name] = arr.reshape(dims)
            elif line.startswith("vocab\t"):
                _, words = line.split("\t", 1)
                self.vocab = frozenset(w for w in words.split() if w)
            elif line.startswith("seed\t"):
                self.seed = int(line.split("\t")[1])


# ----------------------------------------------------------------------
# Module-level operation surface
# ----------------------------------------------------------------------

def encode_task(model: RecognitionModel, task, domain) -> np.ndarray:
    return model.encode_task(task, domain)


def encode_language(model: RecognitionModel, tokens) -> np.ndarray:
    return model.encode_language(tokens)


def predict(model: RecognitionModel, task, domain, description=None, grammar=None) -> BigramTensor:
    if grammar is not None and grammar.version != model.grammar_version:
        raise ValueError(
            f"model trained for grammar version {model.grammar_version}, "
            f"got {grammar.version}"
        )
    return model.predict_tensor(task, domain, description)


def train(
    model: RecognitionModel,
    frontiers,
    tasks_by_id,
    domain,
    joint_sampler=None,
    steps: int = 10000,
    seed: int = 0,
    learning_rate: float = 0.05,
    use_language: bool = True,
) -> RecognitionModel:
    """Stochastic training on solved frontiers and joint-model samples.

    Each step draws its target either from a solved frontier's
    max-posterior entry or from the joint sampler, with probability 1/2
    each when both sources exist. Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    solved = [f for f in frontiers if not f.empty and f.task_id in tasks_by_id]
    if not solved and joint_sampler is None:
        return model
    for _ in range(steps):
        use_frontier = bool(solved)
        if solved and joint_sampler is not None:
            use_frontier = rng.random() < 0.5
        if use_frontier:
            f = solved[int(rng.integers(0, len(solved)))]
            task = tasks_by_id[f.task_id]
            program = f.best().program
            description = task.description if use_language else None
            request = f.request
        else:
            drawn = joint_sampler(rng)
            if drawn is None:
                continue
            task, description, program = drawn
            if not use_language:
                description = None
            request = task.request
        task_feat = model.task_features(task, domain)
        lang_feat = (
            model.language_features(description) if description else np.zeros(LANG_DIM)
        )
        try:
            records = model.derivation_records(program, request)
        except Exception:
            continue
        _, grads = model.loss_and_gradients(task_feat, lang_feat, records)
        model.apply_gradients(grads, learning_rate)
    return model


def make_joint_sampler(
    grammar: Grammar,
    translation: TranslationTable | None,
    lm: SmoothedLM | None,
    domain,
    examples_per_task: int | None = None,
    max_output_len: int = 200,
):
    """A callable drawing one (Task, description, program) from the joint
    generative model, or None when sampling keeps failing."""
    from .domains.base import Task

    n_examples = examples_per_task
    if n_examples is None:
        n_examples = getattr(domain, "sample_examples", 5)
    counter = [0]

    def draw(rng):
        from .translation import primitive_tokens

        for _ in range(20):
            program = grammar.sample(domain.request_type, rng, max_depth=9)
            if program is None:
                continue
            if not primitive_tokens(program):
                # a var-only program carries no library signal and cannot
                # generate any description tokens
                continue
            examples = []
            ok = True
            for _ in range(n_examples):
                x = domain.sample_input(rng)
                try:
                    y = evaluate(
                        program, [domain.prepare_input(x)], domain, domain.eval_limit
                    )
                except EvalError:
                    ok = False
                    break
                y = domain.sample_output_value(y)
                if y is None or (isinstance(y, str) and len(y) > max_output_len):
                    ok = False
                    break
                examples.append((x, y))
            if not ok:
                continue
            counter[0] += 1
            description = None
            if translation is not None:
                description = generate_description(
                    program,
                    translation,
                    lm,
                    mode="sample",
                    seed=int(rng.integers(0, 2**31)),
                )
            task = Task(
                id=f"dream-{counter[0]}",
                request=domain.request_type,
                examples=examples,
                description=description,
                split="dream",
            )
            return task, description, program
        return None

    return draw


def sample_joint(
    grammar: Grammar,
    translation: TranslationTable | None,
    lm: SmoothedLM | None,
    domain,
    n: int,
    seed: int,
    examples_per_task: int | None = None,
) -> list[tuple]:
    """Draw n (Task, description-tokens, Term) triples from the joint
    generative model; may return fewer after bounded retries (logged)."""
    import logging

    rng = np.random.default_rng(seed)
    sampler = make_joint_sampler(grammar, translation, lm, domain, examples_per_task)
    out = []
    failures = 0
    while len(out) < n and failures < n * 5 + 20:
        drawn = sampler(rng)
        if drawn is None:
            failures += 1
            continue
        out.append(drawn)
    if len(out) < n:
        logging.getLogger(__name__).warning(
            "joint sampler exhausted: %d of %d samples", len(out), n
        )
    return out


class RecognitionGrammar:
    """GrammarLike view combining the grammar's typed legality with a
    bigram tensor's probabilities, for use by the enumerator."""

    def __init__(self, grammar: Grammar, tensor: BigramTensor | None = None):
        if tensor is not None and tensor.grammar_version != grammar.version:
            raise ValueError("tensor/grammar version mismatch")
        self.grammar = grammar
        self.tensor = tensor
        self._prob_cache: dict = {}

    @property
    def base_grammar(self) -> Grammar:
        return self.grammar

    def expansions(self, request, env, ctx, parent_key=-1, slot: int = 0):
        if self.tensor is None:
            return self.grammar.expansions(request, env, ctx, parent_key, slot)
        template, order = self.grammar._template(ctx, request, env)
        entries = template.entries
        if not entries:
            return []
        n_prods = len(self.grammar.productions)
        parent = parent_key if 0 <= parent_key <= n_prods else n_prods
        slot_idx = min(slot, self.tensor.arity - 1)
        sig_key = (parent, slot_idx, id(template))
        probs = self._prob_cache.get(sig_key)
        if probs is None:
            logits = self.tensor.logits
            keys = []
            seen = set()
            for e in entries:
                if e.key not in seen:
                    seen.add(e.key)
                    keys.append(e.key)
            values = np.array([logits[parent, k, slot_idx] for k in keys])
            m = values.max()
            z = m + math.log(np.exp(values - m).sum())
            by_key = {k: float(v - z) for k, v in zip(keys, values)}
            n_vars = template.n_vars
            probs = []
            for e in entries:
                lp = by_key[e.key]
                if e.key == n_prods and n_vars > 1:
                    lp -= math.log(n_vars)
                probs.append(lp)
            self._prob_cache[sig_key] = probs
        out = []
        for e, lp in zip(entries, probs):
            out.append(Grammar._materialize(e, order, ctx, lp))
        return out
