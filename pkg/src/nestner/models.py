"""The two nested-NER taggers.

Both share a BiLSTM encoder over composed token vectors. The CRF tagger
scores whole multilabel sequences with emission and transition scores and
decodes with Viterbi. The seq2seq tagger emits one BILOU component at a time
from an LSTM decoder that attends to exactly one encoder position (the
current token) and moves on when it outputs ``<eow>``; a token's components
come out highest priority first.

Decoded label sequences from either model go through the repair decoder, so
any label sequence the models can emit yields a valid mention set.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import codec
from .autodiff import Parameters, Tape, Var, dropout_mask, lstm_cell
from .codec import EOW, EncodedSentence
from .core import LabelAlphabet, Mention, NestnerError, Sentence
from .corpus import Vocabulary
from .embeddings import EmbeddingConfig, PretrainedTable, TokenEmbedder

FORMAT_VERSION = 1


class ModelFormatError(NestnerError):
    """A serialized model cannot be loaded."""


@dataclass(frozen=True)
class CrfConfig:
    embedding: EmbeddingConfig
    hidden_dim: int = 256


@dataclass(frozen=True)
class Seq2seqConfig:
    embedding: EmbeddingConfig
    hidden_dim: int = 256
    decoder_dim: int = 256
    label_embed_dim: int = 128
    max_components_per_token: int = 16


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores)
    e = np.exp(shifted)
    return e / e.sum()


# ----------------------------------------------------------------- CRF layer


def crf_log_partition(tape: Tape, emissions: Sequence[Var], trans: Var, k: int) -> Var:
    """log sum over all length-T label paths of exp(path score).

    ``trans`` is (k+2, k+2); row k holds start transitions and column k+1
    stop transitions. A path scores the sum of its emissions plus the
    transitions it crosses, including start and stop.
    """
    start_scores = tape.narrow(tape.row(trans, k), 0, k)
    inner = tape.block(trans, 0, k, 0, k)
    alpha = tape.add(emissions[0], start_scores)
    for t in range(1, len(emissions)):
        alpha = tape.add(tape.crf_step(alpha, inner), emissions[t])
    stop_scores = tape.narrow(tape.col(trans, k + 1), 0, k)
    return tape.logsumexp(tape.add(alpha, stop_scores))


def crf_gold_score(tape: Tape, emissions: Sequence[Var], trans: Var, k: int, path: Sequence[int]) -> Var:
    assert len(path) == len(emissions)
    terms = [tape.pick2(trans, k, path[0]), tape.pick(emissions[0], path[0])]
    for t in range(1, len(path)):
        terms.append(tape.pick2(trans, path[t - 1], path[t]))
        terms.append(tape.pick(emissions[t], path[t]))
    terms.append(tape.pick2(trans, path[-1], k + 1))
    return tape.add_n(terms)


def crf_nll(tape: Tape, emissions: Sequence[Var], trans: Var, k: int, path: Sequence[int]) -> Var:
    """Negative log-likelihood of the gold path; non-negative."""
    return tape.sub(
        crf_log_partition(tape, emissions, trans, k),
        crf_gold_score(tape, emissions, trans, k, path),
    )


def viterbi(emissions: np.ndarray, trans: np.ndarray) -> list[int]:
    """Highest-scoring label path; ties break toward the lower label id."""
    n, k = emissions.shape
    assert n >= 1 and trans.shape == (k + 2, k + 2)
    delta = emissions[0] + trans[k, :k]
    backptr = []
    for t in range(1, n):
        scores = delta[:, None] + trans[:k, :k]
        best_prev = np.argmax(scores, axis=0)
        delta = scores[best_prev, np.arange(k)] + emissions[t]
        backptr.append(best_prev)
    delta = delta + trans[:k, k + 1]
    path = [int(np.argmax(delta))]
    for bp in reversed(backptr):
        path.append(int(bp[path[-1]]))
    path.reverse()
    return path


# ------------------------------------------------------------ shared encoder


class _NeuralTagger:
    """Embedding + BiLSTM encoder shared by both model kinds."""

    def __init__(
        self,
        vocab: Vocabulary,
        embedding: EmbeddingConfig,
        hidden_dim: int,
        pretrained: PretrainedTable | None,
        dtype,
    ):
        self.vocab = vocab
        self.hidden_dim = hidden_dim
        self.embedder = TokenEmbedder(embedding, vocab, pretrained)
        self.params = Parameters(dtype)

    def _register_encoder(self, rng: np.random.Generator) -> None:
        self.embedder.register(self.params, rng)
        input_dim = self.embedder.config.token_dim
        h = self.hidden_dim
        for prefix in ("enc.fw", "enc.bw"):
            self.params.uniform(f"{prefix}.wx", (input_dim, 4 * h), rng)
            self.params.uniform(f"{prefix}.wh", (h, 4 * h), rng)
            bias = self.params.zeros(f"{prefix}.b", (4 * h,))
            bias[h : 2 * h] = 1.0  # forget gate starts open

    def _encode(
        self,
        tape: Tape,
        sentence: Sentence,
        lookup_forms: Sequence[str] | None = None,
        dropout: float = 0.0,
        rng: np.random.Generator | None = None,
        contextual: np.ndarray | None = None,
    ) -> tuple[list[Var], Var, Var]:
        """Token vectors through the BiLSTM; returns per-token outputs and the
        final state of each direction."""
        assert dropout == 0.0 or rng is not None, "dropout needs a seeded generator"
        n = len(sentence.tokens)
        h = self.hidden_dim
        xs = []
        for i, token in enumerate(sentence.tokens):
            vec = self.embedder.token_vector(
                tape,
                token,
                lookup_form=lookup_forms[i] if lookup_forms is not None else None,
                contextual_row=contextual[i] if contextual is not None else None,
            )
            if dropout > 0.0:
                vec = tape.dropout(vec, dropout_mask(rng, vec.shape[0], dropout, tape.dtype))
            xs.append(vec)
        zeros = tape.const(np.zeros(h))
        fw: list[Var] = []
        state_h, state_c = zeros, zeros
        wx, wh, b = tape.param("enc.fw.wx"), tape.param("enc.fw.wh"), tape.param("enc.fw.b")
        for i in range(n):
            state_h, state_c = lstm_cell(tape, xs[i], state_h, state_c, wx, wh, b, h)
            fw.append(state_h)
        bw: list[Var] = [zeros] * n
        state_h, state_c = zeros, zeros
        wx, wh, b = tape.param("enc.bw.wx"), tape.param("enc.bw.wh"), tape.param("enc.bw.b")
        for i in range(n - 1, -1, -1):
            state_h, state_c = lstm_cell(tape, xs[i], state_h, state_c, wx, wh, b, h)
            bw[i] = state_h
        outputs = [tape.concat([fw[i], bw[i]]) for i in range(n)]
        if dropout > 0.0:
            outputs = [
                tape.dropout(o, dropout_mask(rng, o.shape[0], dropout, tape.dtype))
                for o in outputs
            ]
        return outputs, fw[-1], bw[0]


# ------------------------------------------------------------------ LSTM-CRF


class CrfTagger(_NeuralTagger):
    """BiLSTM encoder with a linear-chain CRF over the multilabel alphabet."""

    kind = "crf"

    def __init__(
        self,
        config: CrfConfig,
        vocab: Vocabulary,
        alphabet: LabelAlphabet,
        pretrained: PretrainedTable | None = None,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        super().__init__(vocab, config.embedding, config.hidden_dim, pretrained, dtype)
        self.config = config
        self.alphabet = alphabet
        if rng is not None:
            self._register(rng)

    def _register(self, rng: np.random.Generator) -> None:
        self._register_encoder(rng)
        k = len(self.alphabet)
        self.params.uniform("crf.emit.w", (2 * self.hidden_dim, k), rng)
        self.params.zeros("crf.emit.b", (k,))
        self.params.uniform("crf.trans", (k + 2, k + 2), rng, fan_in=k + 2)

    def emissions(
        self,
        tape: Tape,
        sentence: Sentence,
        lookup_forms: Sequence[str] | None = None,
        dropout: float = 0.0,
        rng: np.random.Generator | None = None,
        contextual: np.ndarray | None = None,
    ) -> list[Var]:
        outputs, _, _ = self._encode(tape, sentence, lookup_forms, dropout, rng, contextual)
        w, b = tape.param("crf.emit.w"), tape.param("crf.emit.b")
        return [tape.affine(o, w, b) for o in outputs]

    def gold_path(self, sentence: Sentence) -> list[int]:
        return [self.alphabet.id_of(s) for s in codec.encode(sentence).strings()]

    def loss(
        self,
        tape: Tape,
        sentence: Sentence,
        lookup_forms: Sequence[str] | None = None,
        dropout: float = 0.0,
        rng: np.random.Generator | None = None,
        contextual: np.ndarray | None = None,
    ) -> Var:
        emissions = self.emissions(tape, sentence, lookup_forms, dropout, rng, contextual)
        trans = tape.param("crf.trans")
        return crf_nll(tape, emissions, trans, len(self.alphabet), self.gold_path(sentence))

    def predict_labels(self, sentence: Sentence, contextual: np.ndarray | None = None) -> list[str]:
        tape = Tape(self.params)
        emissions = self.emissions(tape, sentence, contextual=contextual)
        scores = np.stack([e.value for e in emissions])
        path = viterbi(scores, self.params["crf.trans"])
        return [self.alphabet.string_of(i) for i in path]

    def predict(self, sentence: Sentence, contextual: np.ndarray | None = None) -> frozenset[Mention]:
        encoded = EncodedSentence.from_strings(self.predict_labels(sentence, contextual))
        return codec.decode(encoded, policy="repair")


# -------------------------------------------------------------------- seq2seq


class Seq2seqTagger(_NeuralTagger):
    """BiLSTM encoder with an LSTM decoder over single BILOU components.

    The decoder reads exactly one encoder position (hard attention on the
    current token) concatenated with the embedding of the previously emitted
    label, and advances to the next token when it emits ``<eow>``.
    """

    kind = "seq2seq"

    def __init__(
        self,
        config: Seq2seqConfig,
        vocab: Vocabulary,
        components: LabelAlphabet,
        pretrained: PretrainedTable | None = None,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        if components.reserved != EOW:
            raise ValueError(f"component alphabet must reserve id 0 for {EOW!r}")
        super().__init__(vocab, config.embedding, config.hidden_dim, pretrained, dtype)
        self.config = config
        self.components = components
        # extra label-table row embeds the beginning-of-sentence "previous label"
        self.bos_id = len(components)
        if rng is not None:
            self._register(rng)

    def _register(self, rng: np.random.Generator) -> None:
        self._register_encoder(rng)
        cfg = self.config
        n_out = len(self.components)
        enc_out = 2 * cfg.hidden_dim
        d = cfg.decoder_dim
        self.params.uniform("dec.labels", (n_out + 1, cfg.label_embed_dim), rng, cfg.label_embed_dim)
        self.params.uniform("dec.wx", (enc_out + cfg.label_embed_dim, 4 * d), rng)
        self.params.uniform("dec.wh", (d, 4 * d), rng)
        bias = self.params.zeros("dec.b", (4 * d,))
        bias[d : 2 * d] = 1.0
        self.params.uniform("dec.init_h.w", (enc_out, d), rng)
        self.params.zeros("dec.init_h.b", (d,))
        self.params.uniform("dec.init_c.w", (enc_out, d), rng)
        self.params.zeros("dec.init_c.b", (d,))
        self.params.uniform("dec.out.w", (d, n_out), rng)
        self.params.zeros("dec.out.b", (n_out,))

    def _init_state(self, tape: Tape, final_fw: Var, final_bw: Var) -> tuple[Var, Var]:
        cat = tape.concat([final_fw, final_bw])
        h0 = tape.tanh(tape.affine(cat, tape.param("dec.init_h.w"), tape.param("dec.init_h.b")))
        c0 = tape.tanh(tape.affine(cat, tape.param("dec.init_c.w"), tape.param("dec.init_c.b")))
        return h0, c0

    def _step(
        self,
        tape: Tape,
        state: tuple[Var, Var],
        t: int,
        prev_id: int,
        enc_outputs: Sequence[Var],
    ) -> tuple[Var, tuple[Var, Var]]:
        """One decoder step attending only to encoder position ``t``."""
        x = tape.concat([enc_outputs[t], tape.lookup("dec.labels", prev_id)])
        h, c = lstm_cell(
            tape, x, state[0], state[1],
            tape.param("dec.wx"), tape.param("dec.wh"), tape.param("dec.b"),
            self.config.decoder_dim,
        )
        logits = tape.affine(h, tape.param("dec.out.w"), tape.param("dec.out.b"))
        return logits, (h, c)

    def step(
        self,
        tape: Tape,
        state: tuple[Var, Var],
        t: int,
        prev_id: int,
        enc_outputs: Sequence[Var],
    ) -> tuple[np.ndarray, tuple[Var, Var]]:
        """Distribution over components plus ``<eow>`` for one decode step."""
        logits, new_state = self._step(tape, state, t, prev_id, enc_outputs)
        return softmax(logits.value), new_state

    def gold_stream(self, sentence: Sentence) -> tuple[str, ...]:
        return codec.flatten(codec.encode(sentence))

    def loss(
        self,
        tape: Tape,
        sentence: Sentence,
        lookup_forms: Sequence[str] | None = None,
        dropout: float = 0.0,
        rng: np.random.Generator | None = None,
        contextual: np.ndarray | None = None,
    ) -> Var:
        """Teacher-forced negative log-likelihood of the gold component stream."""
        enc_outputs, final_fw, final_bw = self._encode(
            tape, sentence, lookup_forms, dropout, rng, contextual
        )
        state = self._init_state(tape, final_fw, final_bw)
        t = 0
        prev = self.bos_id
        losses = []
        for symbol in self.gold_stream(sentence):
            symbol_id = self.components.id_of(symbol)
            logits, state = self._step(tape, state, t, prev, enc_outputs)
            losses.append(tape.softmax_cross_entropy(logits, symbol_id))
            prev = symbol_id
            if symbol == EOW:
                t += 1
        return tape.add_n(losses)

    def predict_stream(self, sentence: Sentence, contextual: np.ndarray | None = None) -> list[str]:
        """Greedy decode; bounded by n * (max_components_per_token + 1) steps."""
        tape = Tape(self.params)
        enc_outputs, final_fw, final_bw = self._encode(tape, sentence, contextual=contextual)
        state = self._init_state(tape, final_fw, final_bw)
        prev = self.bos_id
        stream: list[str] = []
        for t in range(len(sentence.tokens)):
            emitted = 0
            while True:
                logits, state = self._step(tape, state, t, prev, enc_outputs)
                symbol_id = int(np.argmax(logits.value))
                if emitted >= self.config.max_components_per_token:
                    symbol_id = 0  # force <eow>: guarantees termination
                stream.append(self.components.string_of(symbol_id))
                prev = symbol_id
                if symbol_id == 0:
                    break
                emitted += 1
        return stream

    def predict(self, sentence: Sentence, contextual: np.ndarray | None = None) -> frozenset[Mention]:
        stream = self.predict_stream(sentence, contextual)
        encoded = codec.unflatten(stream, len(sentence.tokens))
        return codec.decode(encoded, policy="repair")


# -------------------------------------------------------------- serialization


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return {"shape": list(arr.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode_array(entry: dict, dtype) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
    return arr.astype(dtype)


def _vocab_to_dict(vocab: Vocabulary) -> dict:
    return {
        "forms": vocab.form_strings(),
        "chars": vocab.char_strings(),
        "lemmas": vocab.lemma_strings(),
        "pos": list(vocab.pos_tags),
    }


def _vocab_from_dict(d: dict) -> Vocabulary:
    return Vocabulary(
        forms={s: i for i, s in enumerate(d["forms"])},
        chars={s: i for i, s in enumerate(d["chars"])},
        lemmas={s: i for i, s in enumerate(d["lemmas"])},
        pos_tags=tuple(d["pos"]),
    )


def save_model(model: CrfTagger | Seq2seqTagger, path: str | Path) -> None:
    config = asdict(model.config)
    if model.kind == "crf":
        alphabets = {"labels": list(model.alphabet.strings)}
    else:
        alphabets = {"components": list(model.components.strings)}
    envelope = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "config": config,
        "alphabets": alphabets,
        "vocabulary": _vocab_to_dict(model.vocab),
        "parameters": {name: _encode_array(arr) for name, arr in model.params.items()},
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(envelope, handle)
        handle.write("\n")


def load_model(
    path: str | Path,
    pretrained: PretrainedTable | None = None,
    dtype=np.float64,
) -> CrfTagger | Seq2seqTagger:
    with open(path, encoding="utf-8") as handle:
        envelope = json.load(handle)
    version = envelope.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r}")
    kind = envelope["model_kind"]
    vocab = _vocab_from_dict(envelope["vocabulary"])
    embedding = EmbeddingConfig(**envelope["config"]["embedding"])
    if embedding.pretrained_dim and pretrained is None:
        raise ModelFormatError(
            "model was trained with pretrained vectors; supply the same table to load it"
        )
    if kind == "crf":
        config = CrfConfig(embedding=embedding, hidden_dim=envelope["config"]["hidden_dim"])
        model = CrfTagger(
            config, vocab, LabelAlphabet(tuple(envelope["alphabets"]["labels"])),
            pretrained=pretrained, dtype=dtype,
        )
    elif kind == "seq2seq":
        cfg = envelope["config"]
        config = Seq2seqConfig(
            embedding=embedding,
            hidden_dim=cfg["hidden_dim"],
            decoder_dim=cfg["decoder_dim"],
            label_embed_dim=cfg["label_embed_dim"],
            max_components_per_token=cfg["max_components_per_token"],
        )
        model = Seq2seqTagger(
            config, vocab, LabelAlphabet(tuple(envelope["alphabets"]["components"])),
            pretrained=pretrained, dtype=dtype,
        )
    else:
        raise ModelFormatError(f"unknown model_kind {kind!r}")
    for name, entry in envelope["parameters"].items():
        model.params.add(name, _decode_array(entry, dtype))
    return model
