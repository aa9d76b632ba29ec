"""Training loop: lazy Adam, mini-batches of 8, dropout, word dropout, seeding.

The optimizer applies Adam updates only to parameter rows whose gradient was
touched in the current batch; rows of untouched embedding entries (and their
moment accumulators) stay bit-identical. All randomness — initialization,
shuffling, dropout masks, word dropout — flows from one seeded generator, so
identical seeds give identical runs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import codec, models
from .autodiff import Gradients, Parameters, Tape
from .codec import EOW
from .core import NestnerError, build_alphabet
from .corpus import UNK, TaggedCorpus, Vocabulary, build_vocabulary, merge
from .embeddings import EmbeddingConfig, PretrainedTable
from .metrics import score_mentions


class OptimizerError(NestnerError):
    """An optimizer step was rejected (e.g. non-finite gradient)."""


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-8
    lazy: bool = True

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")


@dataclass(frozen=True)
class RegularizationConfig:
    dropout_rate: float = 0.5
    word_dropout_rate: float = 0.2

    def __post_init__(self) -> None:
        for name in ("dropout_rate", "word_dropout_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    seed: int = 1
    batch_size: int = 8
    include_dev_in_train: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


class LazyAdam:
    """Adam with bias correction by global step, skipping untouched rows.

    With ``lazy=False`` every parameter's moments decay each step regardless
    of whether it received gradient, matching plain Adam.
    """

    def __init__(self, params: Parameters, config: OptimizerConfig | None = None):
        self.params = params
        self.config = config or OptimizerConfig()
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.step_count = 0

    def _apply(self, target: np.ndarray, m: np.ndarray, v: np.ndarray, g: np.ndarray) -> None:
        cfg = self.config
        t = self.step_count
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        target -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)

    def step(self, grads: Gradients) -> None:
        """One update. Rejects the whole step if any gradient is non-finite."""
        bad = grads.nonfinite_names()
        if bad:
            raise OptimizerError(f"non-finite gradient for parameter {bad[0]}; step rejected")
        self.step_count += 1
        if not self.config.lazy:
            for name, arr in self.params.items():
                g = grads.materialize(name, arr.shape, arr.dtype)
                self._apply(arr, self.m[name], self.v[name], g)
            return
        for name, g in grads.dense.items():
            self._apply(self.params[name], self.m[name], self.v[name], g)
        for name, rows in grads.rows.items():
            arr = self.params[name]
            m, v = self.m[name], self.v[name]
            for row in sorted(rows):
                self._apply(arr[row], m[row], v[row], rows[row])


def word_dropout(forms: Sequence[str], rate: float, rng: np.random.Generator) -> list[str]:
    """Independently replace each form with the unknown token at ``rate``."""
    if rate <= 0.0:
        return list(forms)
    return [UNK if rng.random() < rate else form for form in forms]


# ---------------------------------------------------------------- model build


def _check_nesting_depth(corpus: TaggedCorpus, limit: int) -> None:
    for i, sentence in enumerate(corpus.sentences):
        for t, label in enumerate(codec.encode(sentence).labels):
            if len(label) > limit:
                raise NestnerError(
                    f"sentence {i}, token {t}: nesting depth {len(label)} exceeds "
                    f"max_components_per_token={limit}"
                )


def multilabel_alphabet(corpus: TaggedCorpus):
    """Alphabet of whole multilabel strings observed in the corpus."""
    labels = []
    for sentence in corpus.sentences:
        labels.extend(codec.encode(sentence).strings())
    return build_alphabet(labels, reserved="O")


def component_alphabet(corpus: TaggedCorpus):
    """Alphabet of single components observed in the corpus, with <eow> at 0."""
    symbols = []
    for sentence in corpus.sentences:
        symbols.extend(codec.flatten(codec.encode(sentence)))
    return build_alphabet(symbols, reserved=EOW)


def build_model(
    kind: str,
    corpus: TaggedCorpus,
    embedding: EmbeddingConfig | None = None,
    hidden_dim: int = 256,
    decoder_dim: int = 256,
    label_embed_dim: int = 128,
    max_components_per_token: int = 16,
    pretrained: PretrainedTable | None = None,
    vocab: Vocabulary | None = None,
    min_freq: int = 1,
    seed: int = 1,
    dtype=np.float64,
):
    """Untrained tagger with vocabulary and label alphabet taken from ``corpus``."""
    if vocab is None:
        vocab = build_vocabulary(corpus, min_freq)
    if embedding is None:
        embedding = EmbeddingConfig()
    if embedding.use_pos_onehot and embedding.pos_dim == 0:
        embedding = replace(embedding, pos_dim=vocab.n_pos)
    rng = np.random.default_rng(seed)
    if kind == "crf":
        config = models.CrfConfig(embedding=embedding, hidden_dim=hidden_dim)
        return models.CrfTagger(
            config, vocab, multilabel_alphabet(corpus), pretrained, rng=rng, dtype=dtype
        )
    if kind == "seq2seq":
        _check_nesting_depth(corpus, max_components_per_token)
        config = models.Seq2seqConfig(
            embedding=embedding,
            hidden_dim=hidden_dim,
            decoder_dim=decoder_dim,
            label_embed_dim=label_embed_dim,
            max_components_per_token=max_components_per_token,
        )
        return models.Seq2seqTagger(
            config, vocab, component_alphabet(corpus), pretrained, rng=rng, dtype=dtype
        )
    raise ValueError(f"unknown model kind {kind!r}; valid: crf, seq2seq")


# --------------------------------------------------------------- training loop


def _batches(
    items: list, batch_size: int, rng: np.random.Generator
) -> list[list]:
    """Seeded shuffle, then stable sort by length so batches hold similar lengths,
    then shuffle the batch order."""
    order = rng.permutation(len(items))
    shuffled = [items[i] for i in order]
    shuffled.sort(key=lambda item: len(item[0].tokens))
    chunks = [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
    chunk_order = rng.permutation(len(chunks))
    return [chunks[i] for i in chunk_order]


def evaluate_model(model, corpus: TaggedCorpus) -> float:
    """Strict micro F1 of the model's predictions over a corpus."""
    gold = []
    pred = []
    for i, sentence in enumerate(corpus.sentences):
        contextual = corpus.contextual[i] if corpus.contextual is not None else None
        gold.append(sentence.mentions)
        pred.append(model.predict(sentence, contextual=contextual))
    overall, _ = score_mentions(gold, pred)
    return overall.f1


def train(
    model,
    corpus: TaggedCorpus,
    config: TrainConfig,
    optimizer: OptimizerConfig | None = None,
    regularization: RegularizationConfig | None = None,
    dev: TaggedCorpus | None = None,
    checkpoint_path: str | Path | None = None,
) -> list[dict]:
    """Train in place; returns per-epoch records {epoch, train_loss, dev_f1}.

    With a dev corpus the model keeps its best-dev-F1 parameters at the end
    (and writes them to ``checkpoint_path`` whenever they improve). With
    ``include_dev_in_train`` the dev sentences join the training data and no
    dev score is tracked.
    """
    if not corpus.sentences:
        raise NestnerError("training corpus is empty")
    regularization = regularization or RegularizationConfig()
    if config.include_dev_in_train and dev is not None:
        corpus = merge(corpus, dev)
        dev = None
    if model.kind == "seq2seq":
        _check_nesting_depth(corpus, model.config.max_components_per_token)
    rng = np.random.default_rng(config.seed)
    adam = LazyAdam(model.params, optimizer)
    items = [
        (
            sentence,
            corpus.contextual[i] if corpus.contextual is not None else None,
        )
        for i, sentence in enumerate(corpus.sentences)
    ]
    metrics: list[dict] = []
    best_f1 = -1.0
    best_params: Parameters | None = None
    for epoch in range(1, config.epochs + 1):
        total_loss = 0.0
        for batch in _batches(items, config.batch_size, rng):
            tape = Tape(model.params)
            losses = []
            for sentence, contextual in batch:
                lookup_forms = word_dropout(
                    sentence.forms(), regularization.word_dropout_rate, rng
                )
                losses.append(
                    model.loss(
                        tape,
                        sentence,
                        lookup_forms=lookup_forms,
                        dropout=regularization.dropout_rate,
                        rng=rng,
                        contextual=contextual,
                    )
                )
            total_loss += float(sum(l.value for l in losses))
            batch_loss = tape.scale(tape.add_n(losses), 1.0 / len(losses))
            adam.step(tape.backward(batch_loss))
        record = {"epoch": epoch, "train_loss": total_loss / len(items)}
        if dev is not None:
            f1 = evaluate_model(model, dev)
            record["dev_f1"] = f1
            if f1 > best_f1:
                best_f1 = f1
                best_params = model.params.copy()
                if checkpoint_path is not None:
                    models.save_model(model, checkpoint_path)
        metrics.append(record)
    if dev is not None and best_params is not None:
        model.params.load_state(best_params)
    elif checkpoint_path is not None:
        models.save_model(model, checkpoint_path)
    return metrics
