"""Per-token input vectors: pretrained, trainable, POS one-hot, char BiGRU, contextual.

The token vector is the concatenation, in this order, of every enabled
source: frozen pretrained word vector, trainable form embedding, trainable
lemma embedding, POS one-hot, character-level BiGRU state, and a precomputed
contextual vector read from a sidecar file. The total width is fixed by
:class:`EmbeddingConfig` for a model's whole lifetime.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Parameters, Tape, Var, gru_cell
from .core import NestnerError, Token
from .corpus import UNK, Vocabulary


class PretrainedFormatError(NestnerError):
    """A pretrained vector file is malformed."""


@dataclass(frozen=True)
class EmbeddingConfig:
    """Widths of the token-vector sources; 0 disables a source.

    ``char_rnn_dim`` is per direction, so characters contribute
    ``2 * char_rnn_dim`` when enabled. ``pos_dim`` is resolved from the
    vocabulary when ``use_pos_onehot`` is set.
    """

    pretrained_dim: int = 0
    trainable_dim: int = 256
    lemma_dim: int = 0
    char_dim: int = 128
    char_rnn_dim: int = 128
    use_pos_onehot: bool = False
    pos_dim: int = 0
    contextual_dim: int = 0

    def __post_init__(self) -> None:
        for name in (
            "pretrained_dim",
            "trainable_dim",
            "lemma_dim",
            "char_dim",
            "char_rnn_dim",
            "pos_dim",
            "contextual_dim",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if bool(self.char_dim) != bool(self.char_rnn_dim):
            raise ValueError("char_dim and char_rnn_dim must be enabled together")

    @property
    def token_dim(self) -> int:
        dim = self.pretrained_dim + self.trainable_dim + self.lemma_dim + self.contextual_dim
        if self.use_pos_onehot:
            if self.pos_dim <= 0:
                raise ValueError("use_pos_onehot is set but pos_dim is unresolved")
            dim += self.pos_dim
        if self.char_dim:
            dim += 2 * self.char_rnn_dim
        return dim


class PretrainedTable:
    """Frozen pretrained word vectors; unknown forms map to a zero vector."""

    def __init__(self, index: dict[str, int], matrix: np.ndarray):
        self.index = index
        self.matrix = matrix
        self.matrix.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, form: str) -> bool:
        return form in self.index or form.lower() in self.index

    def vector(self, form: str) -> np.ndarray:
        """Row for ``form`` (exact match first, then lowercased); zeros if absent."""
        idx = self.index.get(form)
        if idx is None:
            idx = self.index.get(form.lower())
        if idx is None or form == UNK:
            return np.zeros(self.dim, dtype=self.matrix.dtype)
        return self.matrix[idx]


def load_pretrained(path: str | Path, expected_dim: int) -> PretrainedTable:
    """Read text-format vectors: optional "count dim" header, then "word v1 .. vd" rows.

    Duplicate words keep their first occurrence; every row must have exactly
    ``expected_dim`` values.
    """
    index: dict[str, int] = {}
    rows: list[np.ndarray] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            fields = raw.rstrip("\n").split(" ")
            fields = [f for f in fields if f]
            if not fields:
                continue
            if lineno == 1 and len(fields) == 2 and _is_int(fields[0]) and _is_int(fields[1]):
                if int(fields[1]) != expected_dim:
                    raise PretrainedFormatError(
                        f"{path}:1: header declares dimension {fields[1]}, expected {expected_dim}"
                    )
                continue
            word, values = fields[0], fields[1:]
            if len(values) != expected_dim:
                raise PretrainedFormatError(
                    f"{path}:{lineno}: expected {expected_dim} values, found {len(values)}"
                )
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise PretrainedFormatError(f"{path}:{lineno}: non-numeric field") from exc
            if word not in index:
                index[word] = len(rows)
                rows.append(vec)
    matrix = np.vstack(rows) if rows else np.zeros((0, expected_dim))
    return PretrainedTable(index, matrix)


def _is_int(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


class TokenEmbedder:
    """Registers embedding parameters and assembles token vectors on a tape."""

    FORM_TABLE = "embed.form"
    LEMMA_TABLE = "embed.lemma"
    CHAR_TABLE = "embed.char"
    CHAR_FW = ("embed.char_fw.wx", "embed.char_fw.wh", "embed.char_fw.b")
    CHAR_BW = ("embed.char_bw.wx", "embed.char_bw.wh", "embed.char_bw.b")

    def __init__(
        self,
        config: EmbeddingConfig,
        vocab: Vocabulary,
        pretrained: PretrainedTable | None = None,
    ):
        if config.pretrained_dim and pretrained is None:
            raise ValueError("config enables pretrained vectors but no table was given")
        if pretrained is not None and config.pretrained_dim not in (0, pretrained.dim):
            raise ValueError(
                f"pretrained table has dimension {pretrained.dim}, "
                f"config says {config.pretrained_dim}"
            )
        if config.use_pos_onehot and config.pos_dim != vocab.n_pos:
            raise ValueError(
                f"pos one-hot width {config.pos_dim} does not match "
                f"{vocab.n_pos} POS tags in the vocabulary"
            )
        self.config = config
        self.vocab = vocab
        self.pretrained = pretrained

    def register(self, params: Parameters, rng: np.random.Generator) -> None:
        cfg = self.config
        if cfg.trainable_dim:
            params.uniform(
                self.FORM_TABLE, (self.vocab.n_forms, cfg.trainable_dim), rng, cfg.trainable_dim
            )
        if cfg.lemma_dim:
            params.uniform(
                self.LEMMA_TABLE, (self.vocab.n_lemmas, cfg.lemma_dim), rng, cfg.lemma_dim
            )
        if cfg.char_dim:
            params.uniform(
                self.CHAR_TABLE, (self.vocab.n_chars, cfg.char_dim), rng, cfg.char_dim
            )
            for wx, wh, b in (self.CHAR_FW, self.CHAR_BW):
                params.uniform(wx, (cfg.char_dim, 3 * cfg.char_rnn_dim), rng)
                params.uniform(wh, (cfg.char_rnn_dim, 3 * cfg.char_rnn_dim), rng)
                params.zeros(b, (3 * cfg.char_rnn_dim,))

    def _char_state(self, tape: Tape, char_ids: list[int], names) -> Var:
        wx = tape.param(names[0])
        wh = tape.param(names[1])
        b = tape.param(names[2])
        h = tape.const(np.zeros(self.config.char_rnn_dim))
        for cid in char_ids:
            x = tape.lookup(self.CHAR_TABLE, cid)
            h = gru_cell(tape, x, h, wx, wh, b, self.config.char_rnn_dim)
        return h

    def token_vector(
        self,
        tape: Tape,
        token: Token,
        lookup_form: str | None = None,
        contextual_row: np.ndarray | None = None,
    ) -> Var:
        """Assemble one token's input vector.

        ``lookup_form`` replaces the form for the pretrained and trainable
        lookups (word dropout); characters always come from the raw form.
        """
        cfg = self.config
        form = lookup_form if lookup_form is not None else token.form
        parts: list[Var] = []
        if cfg.pretrained_dim:
            parts.append(tape.const(self.pretrained.vector(form)))
        if cfg.trainable_dim:
            parts.append(tape.lookup(self.FORM_TABLE, self.vocab.form_id(form)))
        if cfg.lemma_dim:
            parts.append(tape.lookup(self.LEMMA_TABLE, self.vocab.lemma_id(token.lemma)))
        if cfg.use_pos_onehot:
            onehot = np.zeros(cfg.pos_dim)
            pos_i = self.vocab.pos_index(token.pos)
            if pos_i is not None:
                onehot[pos_i] = 1.0
            parts.append(tape.const(onehot))
        if cfg.char_dim:
            char_ids = self.vocab.char_ids(token.form)
            parts.append(self._char_state(tape, char_ids, self.CHAR_FW))
            parts.append(self._char_state(tape, char_ids[::-1], self.CHAR_BW))
        if cfg.contextual_dim:
            if contextual_row is None:
                raise ValueError("config enables contextual vectors but none were supplied")
            if contextual_row.shape != (cfg.contextual_dim,):
                raise ValueError(
                    f"contextual row has shape {contextual_row.shape}, "
                    f"expected ({cfg.contextual_dim},)"
                )
            parts.append(tape.const(contextual_row))
        return tape.concat(parts) if len(parts) > 1 else parts[0]
