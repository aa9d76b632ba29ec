"""CoNLL-style vertical file I/O, scheme conversion, and vocabulary building.

Files are UTF-8, tab-separated, one token per line, blank line between
sentences, final newline required. Which columns a file carries is declared
per call (e.g. ``"form,label"`` or ``"form,lemma,pos,label"``) rather than
sniffed. Gold label columns are BILOU multilabels and must decode strictly;
flat BIO corpora are converted on read.

Mention span files (for the encode/decode commands) use the token columns
plus one optional trailing column listing mentions that start at that token
as ``TYPE START END`` triples joined by ``;``.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import codec
from .core import (
    Mention,
    Multilabel,
    NestnerError,
    Sentence,
    Span,
    Token,
    mention_sort_key,
)

log = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"

COLUMN_NAMES = ("form", "lemma", "pos", "label")
SCHEMES = ("bilou", "bio")


class CorpusError(NestnerError):
    """A corpus file is malformed; the message carries file/line coordinates."""


@dataclass(frozen=True)
class ColumnSpec:
    """Declared column layout of a vertical file, e.g. form,lemma,pos,label."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(self.names))
        for name in self.names:
            if name not in COLUMN_NAMES:
                raise ValueError(f"unknown column {name!r}; valid: {COLUMN_NAMES}")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate column in spec: {self.names}")
        if "form" not in self.names:
            raise ValueError("column spec must include 'form'")

    @classmethod
    def parse(cls, text: str) -> "ColumnSpec":
        return cls(tuple(part.strip() for part in text.split(",")))

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int | None:
        try:
            return self.names.index(name)
        except ValueError:
            return None

    @property
    def has_label(self) -> bool:
        return "label" in self.names


@dataclass(frozen=True)
class TaggedCorpus:
    sentences: tuple[Sentence, ...]
    source: str | None = None
    scheme: str = "bilou"
    contextual: tuple[np.ndarray, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; valid: {SCHEMES}")
        if self.contextual is not None:
            object.__setattr__(self, "contextual", tuple(self.contextual))
            _check_contextual(self.sentences, self.contextual)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)


def _check_contextual(sentences: Sequence[Sentence], rows: Sequence[np.ndarray]) -> None:
    if len(rows) != len(sentences):
        raise CorpusError(
            f"contextual vectors cover {len(rows)} sentences, corpus has {len(sentences)}"
        )
    for i, (sentence, mat) in enumerate(zip(sentences, rows)):
        if mat.shape[0] != len(sentence.tokens):
            raise CorpusError(
                f"sentence {i}: {mat.shape[0]} contextual rows for "
                f"{len(sentence.tokens)} tokens"
            )


def _read_blocks(path: str | Path) -> Iterator[tuple[int, list[tuple[int, list[str]]]]]:
    """Yield (first line number, [(line number, fields), ...]) per sentence block."""
    block: list[tuple[int, list[str]]] = []
    first = 0
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                if block:
                    yield first, block
                    block = []
                continue
            if not block:
                first = lineno
            block.append((lineno, line.split("\t")))
    if block:
        yield first, block


def _block_to_sentence(
    path: str | Path,
    sentence_index: int,
    block: list[tuple[int, list[str]]],
    columns: ColumnSpec,
    scheme: str,
    policy: codec.RepairPolicy,
) -> Sentence:
    form_i = columns.index("form")
    lemma_i = columns.index("lemma")
    pos_i = columns.index("pos")
    label_i = columns.index("label")
    tokens: list[Token] = []
    labels: list[str] = []
    for lineno, fields in block:
        if len(fields) < len(columns):
            raise CorpusError(
                f"{path}:{lineno}: expected at least {len(columns)} tab-separated "
                f"columns, found {len(fields)}"
            )
        tokens.append(
            Token(
                form=fields[form_i],
                lemma=fields[lemma_i] if lemma_i is not None else None,
                pos=fields[pos_i] if pos_i is not None else None,
            )
        )
        if label_i is not None:
            label = fields[label_i]
            if scheme == "bilou":  # BIO rows are validated during conversion below
                try:
                    Multilabel.parse(label)
                except NestnerError as exc:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            labels.append(label)
    mentions: frozenset[Mention] = frozenset()
    if label_i is not None:
        if scheme == "bio":
            try:
                labels = bio_to_bilou(labels)
            except CorpusError as exc:
                raise CorpusError(f"{path}: sentence {sentence_index}: {exc}") from exc
        encoded = codec.EncodedSentence.from_strings(labels)
        try:
            mentions = codec.decode(encoded, policy=policy)
        except codec.DecodeError as exc:
            raise CorpusError(
                f"{path}: sentence {sentence_index}: {exc}"
            ) from exc
    return Sentence(tuple(tokens), mentions)


def read_conll(
    path: str | Path,
    columns: ColumnSpec | str = "form,label",
    scheme: str = "bilou",
    policy: codec.RepairPolicy = "strict",
) -> TaggedCorpus:
    """Read a labeled vertical file; gold mentions are decoded from labels.

    Gold data should use the default strict policy so corpus errors surface
    loudly; ``repair`` is for reading raw model output.
    """
    if isinstance(columns, str):
        columns = ColumnSpec.parse(columns)
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; valid: {SCHEMES}")
    sentences = [
        _block_to_sentence(path, i, block, columns, scheme, policy)
        for i, (_, block) in enumerate(_read_blocks(path))
    ]
    return TaggedCorpus(tuple(sentences), source=str(path), scheme=scheme)


def _sentence_rows(sentence: Sentence, columns: ColumnSpec, scheme: str) -> list[list[str]]:
    labels = codec.encode(sentence).strings()
    if scheme == "bio":
        labels = bilou_to_bio(labels)
    rows = []
    for token, label in zip(sentence.tokens, labels):
        fields = []
        for name in columns.names:
            if name == "form":
                fields.append(token.form)
            elif name == "lemma":
                fields.append(token.lemma if token.lemma is not None else "_")
            elif name == "pos":
                fields.append(token.pos if token.pos is not None else "_")
            else:
                fields.append(label)
        rows.append(fields)
    return rows


def write_conll(
    corpus: TaggedCorpus,
    path: str | Path,
    columns: ColumnSpec | str = "form,label",
) -> None:
    """Write sentences with labels freshly encoded from their mention sets."""
    if isinstance(columns, str):
        columns = ColumnSpec.parse(columns)
    with open(path, "w", encoding="utf-8") as handle:
        for i, sentence in enumerate(corpus.sentences):
            if i:
                handle.write("\n")
            for fields in _sentence_rows(sentence, columns, corpus.scheme):
                handle.write("\t".join(fields) + "\n")


def read_spans(path: str | Path, columns: ColumnSpec | str = "form") -> TaggedCorpus:
    """Read a span file: token columns plus optional trailing mention lists."""
    if isinstance(columns, str):
        columns = ColumnSpec.parse(columns)
    if columns.has_label:
        raise ValueError("span files carry mention lists, not a label column")
    form_i = columns.index("form")
    lemma_i = columns.index("lemma")
    pos_i = columns.index("pos")
    sentences = []
    for _, block in _read_blocks(path):
        tokens = []
        mentions: list[Mention] = []
        for lineno, fields in block:
            if len(fields) < len(columns):
                raise CorpusError(
                    f"{path}:{lineno}: expected at least {len(columns)} columns, "
                    f"found {len(fields)}"
                )
            tokens.append(
                Token(
                    form=fields[form_i],
                    lemma=fields[lemma_i] if lemma_i is not None else None,
                    pos=fields[pos_i] if pos_i is not None else None,
                )
            )
            if len(fields) > len(columns) and fields[len(columns)]:
                mentions.extend(_parse_span_list(path, lineno, fields[len(columns)]))
        unique = frozenset(mentions)
        if len(unique) < len(mentions):
            log.warning(
                "%s: duplicate mentions in sentence starting at line %d were dropped",
                path,
                block[0][0],
            )
        try:
            sentences.append(Sentence(tuple(tokens), unique))
        except ValueError as exc:
            raise CorpusError(f"{path}:{block[0][0]}: {exc}") from exc
    return TaggedCorpus(tuple(sentences), source=str(path))


def _parse_span_list(path: str | Path, lineno: int, text: str) -> list[Mention]:
    mentions = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split()
        if len(parts) != 3:
            raise CorpusError(
                f"{path}:{lineno}: bad mention {chunk!r}, want 'TYPE START END'"
            )
        entity_type, start_s, end_s = parts
        try:
            mention = Mention(entity_type, Span(int(start_s), int(end_s)))
        except ValueError as exc:
            raise CorpusError(f"{path}:{lineno}: bad mention {chunk!r}: {exc}") from exc
        mentions.append(mention)
    return mentions


def write_spans(
    corpus: TaggedCorpus,
    path: str | Path,
    columns: ColumnSpec | str = "form",
) -> None:
    if isinstance(columns, str):
        columns = ColumnSpec.parse(columns)
    with open(path, "w", encoding="utf-8") as handle:
        for i, sentence in enumerate(corpus.sentences):
            if i:
                handle.write("\n")
            starts: dict[int, list[Mention]] = {}
            for mention in sorted(sentence.mentions, key=mention_sort_key):
                starts.setdefault(mention.span.start, []).append(mention)
            for t, token in enumerate(sentence.tokens):
                fields = []
                for name in columns.names:
                    if name == "form":
                        fields.append(token.form)
                    elif name == "lemma":
                        fields.append(token.lemma if token.lemma is not None else "_")
                    elif name == "pos":
                        fields.append(token.pos if token.pos is not None else "_")
                if t in starts:
                    fields.append(
                        ";".join(
                            f"{m.entity_type} {m.span.start} {m.span.end}" for m in starts[t]
                        )
                    )
                handle.write("\t".join(fields) + "\n")


def _parse_flat(labels: Sequence[str], allowed: str) -> list[tuple[str, str] | None]:
    """Split flat labels into (tag, type) pairs; None for O. Multilabels rejected."""
    out: list[tuple[str, str] | None] = []
    for i, label in enumerate(labels):
        if label == "O":
            out.append(None)
            continue
        if "|" in label:
            raise CorpusError(
                f"label {i}: nested multilabel {label!r}; scheme conversion is flat-only"
            )
        tag, sep, entity_type = label.partition("-")
        if not sep or tag not in allowed or not entity_type:
            raise CorpusError(f"label {i}: malformed {label!r} (want one of {allowed})")
        out.append((tag, entity_type))
    return out


def bio_to_bilou(labels: Sequence[str]) -> list[str]:
    """Rewrite a flat BIO sequence as BILOU; mention boundaries are unchanged."""
    parsed = _parse_flat(labels, "BI")
    out = list(labels)
    runs: list[tuple[int, int]] = []
    for i, item in enumerate(parsed):
        if item is None:
            continue
        tag, entity_type = item
        if tag == "B":
            runs.append((i, i + 1))
        else:
            prev = parsed[i - 1] if i else None
            if prev is None or prev[1] != entity_type:
                raise CorpusError(f"label {i}: I-{entity_type} does not continue a mention")
            runs[-1] = (runs[-1][0], i + 1)
    for start, end in runs:
        if end - start == 1:
            out[start] = "U-" + parsed[start][1]
        else:
            out[start] = "B-" + parsed[start][1]
            out[end - 1] = "L-" + parsed[end - 1][1]
    return out


def bilou_to_bio(labels: Sequence[str]) -> list[str]:
    """Rewrite a flat BILOU sequence as BIO; mention boundaries are unchanged."""
    parsed = _parse_flat(labels, "BILU")
    out = []
    open_type: str | None = None
    for i, item in enumerate(parsed):
        if item is None:
            if open_type is not None:
                raise CorpusError(f"label {i}: mention of type {open_type} not closed")
            out.append("O")
            continue
        tag, entity_type = item
        if tag in ("B", "U"):
            if open_type is not None:
                raise CorpusError(f"label {i}: mention of type {open_type} not closed")
            out.append("B-" + entity_type)
            open_type = entity_type if tag == "B" else None
        else:  # I or L
            if open_type != entity_type:
                raise CorpusError(f"label {i}: {tag}-{entity_type} does not continue a mention")
            out.append("I-" + entity_type)
            if tag == "L":
                open_type = None
    if open_type is not None:
        raise CorpusError(f"label {len(labels)}: mention of type {open_type} not closed")
    return out


@dataclass(frozen=True)
class Vocabulary:
    """Dense ids for forms/chars/lemmas (pad=0, unk=1) and a POS one-hot order."""

    forms: dict[str, int]
    chars: dict[str, int]
    pos_tags: tuple[str, ...]
    lemmas: dict[str, int]

    @property
    def n_forms(self) -> int:
        return len(self.forms)

    @property
    def n_chars(self) -> int:
        return len(self.chars)

    @property
    def n_lemmas(self) -> int:
        return len(self.lemmas)

    @property
    def n_pos(self) -> int:
        return len(self.pos_tags)

    def form_id(self, form: str) -> int:
        return self.forms.get(form, 1)

    def lemma_id(self, lemma: str | None) -> int:
        if lemma is None:
            return 1
        return self.lemmas.get(lemma, 1)

    def char_ids(self, form: str) -> list[int]:
        return [self.chars.get(c, 1) for c in form]

    def pos_index(self, pos: str | None) -> int | None:
        if pos is None:
            return None
        try:
            return self.pos_tags.index(pos)
        except ValueError:
            return None

    def form_strings(self) -> list[str]:
        return _id_ordered(self.forms)

    def char_strings(self) -> list[str]:
        return _id_ordered(self.chars)

    def lemma_strings(self) -> list[str]:
        return _id_ordered(self.lemmas)


def _id_ordered(index: dict[str, int]) -> list[str]:
    return [s for s, _ in sorted(index.items(), key=lambda kv: kv[1])]


def _index_by_frequency(counts: Counter, min_freq: int) -> dict[str, int]:
    index = {PAD: 0, UNK: 1}
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    for item, count in ranked:
        if count >= min_freq and item not in index:
            index[item] = len(index)
    return index


def build_vocabulary(corpus: TaggedCorpus, min_freq: int = 1) -> Vocabulary:
    """Deterministic vocabulary: frequency-then-lexicographic id order.

    Forms and lemmas below ``min_freq`` map to the unk id; characters of all
    training forms are kept.
    """
    form_counts: Counter = Counter()
    lemma_counts: Counter = Counter()
    char_counts: Counter = Counter()
    pos_set: set[str] = set()
    for sentence in corpus.sentences:
        for token in sentence.tokens:
            form_counts[token.form] += 1
            char_counts.update(token.form)
            if token.lemma is not None:
                lemma_counts[token.lemma] += 1
            if token.pos is not None:
                pos_set.add(token.pos)
    return Vocabulary(
        forms=_index_by_frequency(form_counts, min_freq),
        chars=_index_by_frequency(char_counts, 1),
        pos_tags=tuple(sorted(pos_set)),
        lemmas=_index_by_frequency(lemma_counts, min_freq),
    )


def read_contextual(path: str | Path, dim: int | None = None) -> tuple[np.ndarray, ...]:
    """Read a sidecar file of per-token vectors: floats per line, blank line
    between sentences. Returns one (n_tokens, dim) array per sentence."""
    sentences: list[np.ndarray] = []
    rows: list[list[float]] = []

    def flush() -> None:
        nonlocal rows
        if rows:
            sentences.append(np.asarray(rows, dtype=np.float64))
            rows = []

    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                flush()
                continue
            try:
                values = [float(x) for x in line.split()]
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: non-numeric field") from exc
            if dim is not None and len(values) != dim:
                raise CorpusError(
                    f"{path}:{lineno}: expected {dim} values, found {len(values)}"
                )
            if rows and len(values) != len(rows[0]):
                raise CorpusError(
                    f"{path}:{lineno}: inconsistent vector width within a sentence"
                )
            rows.append(values)
    flush()
    return tuple(sentences)


def attach_contextual(corpus: TaggedCorpus, vectors: Sequence[np.ndarray]) -> TaggedCorpus:
    return TaggedCorpus(
        corpus.sentences,
        source=corpus.source,
        scheme=corpus.scheme,
        contextual=tuple(vectors),
    )


def merge(a: TaggedCorpus, b: TaggedCorpus) -> TaggedCorpus:
    """Concatenate two corpora (e.g. train+dev for a final model)."""
    contextual = None
    if a.contextual is not None and b.contextual is not None:
        contextual = a.contextual + b.contextual
    return TaggedCorpus(
        a.sentences + b.sentences,
        source=a.source,
        scheme=a.scheme,
        contextual=contextual,
    )
