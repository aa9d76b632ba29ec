"""Shared domain types: tokens, spans, mentions, label components, multilabels.

Label string grammar (bit-exact):

    multilabel := "O" | component ("|" component)*
    component  := ("B"|"I"|"L"|"U") "-" type
    type       := [^|\\s]+

"O" marks a token outside every mention and is never a component of a
larger multilabel. All types here are immutable values after construction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

COMPONENT_TAGS = ("B", "I", "L", "U")
OUTSIDE = "O"

_WHITESPACE = re.compile(r"\s")


class NestnerError(Exception):
    """Base class for errors raised by this package."""


class LabelParseError(NestnerError, ValueError):
    """A label string does not follow the multilabel grammar."""


def _check_entity_type(entity_type: str) -> None:
    if not entity_type:
        raise ValueError("entity type must be non-empty")
    if "|" in entity_type or _WHITESPACE.search(entity_type):
        raise ValueError(f"entity type may not contain '|' or whitespace: {entity_type!r}")
    if entity_type.startswith("-"):
        raise ValueError(f"entity type may not start with '-': {entity_type!r}")


@dataclass(frozen=True)
class Token:
    form: str
    lemma: str | None = None
    pos: str | None = None

    def __post_init__(self) -> None:
        if not self.form or _WHITESPACE.search(self.form):
            raise ValueError(f"token form must be non-empty and whitespace-free: {self.form!r}")


@dataclass(frozen=True, order=True)
class Span:
    """Half-open token range: ``start`` inclusive, ``end`` exclusive."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span: need 0 <= start < end, got ({self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def contains(self, other: "Span") -> bool:
        return self.start <= other.start and other.end <= self.end

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class Mention:
    """A typed token span, e.g. ``Mention("ORG", Span(1, 9))``."""

    entity_type: str
    span: Span

    def __post_init__(self) -> None:
        _check_entity_type(self.entity_type)

    @property
    def start(self) -> int:
        return self.span.start

    @property
    def end(self) -> int:
        return self.span.end


def mention_sort_key(mention: Mention) -> tuple[int, int, str]:
    """Sort key realizing mention priority.

    Mentions starting earlier come first; among equal starts the longer one
    comes first. Equal spans of different types are ordered lexicographically
    by type, which keeps the encoding deterministic.
    """
    return (mention.span.start, -mention.span.end, mention.entity_type)


def mention_precedes(a: Mention, b: Mention) -> bool:
    """True iff ``a`` has strictly higher priority than ``b``."""
    return mention_sort_key(a) < mention_sort_key(b)


@dataclass(frozen=True)
class LabelComponent:
    """One BILOU component of a multilabel, e.g. ``I-ORG``."""

    tag: str
    entity_type: str

    def __post_init__(self) -> None:
        if self.tag not in COMPONENT_TAGS:
            raise ValueError(f"component tag must be one of {COMPONENT_TAGS}, got {self.tag!r}")
        _check_entity_type(self.entity_type)

    def __str__(self) -> str:
        return f"{self.tag}-{self.entity_type}"

    @classmethod
    def parse(cls, text: str) -> "LabelComponent":
        if text == OUTSIDE:
            raise LabelParseError(f"'O' is a full label, not a component: {text!r}")
        tag, sep, entity_type = text.partition("-")
        if not sep or tag not in COMPONENT_TAGS:
            raise LabelParseError(f"malformed component (want B-/I-/L-/U- prefix): {text!r}")
        if not entity_type:
            raise LabelParseError(f"component has empty entity type: {text!r}")
        try:
            return cls(tag, entity_type)
        except ValueError as exc:
            raise LabelParseError(f"bad component {text!r}: {exc}") from exc


@dataclass(frozen=True)
class Multilabel:
    """Priority-ordered BILOU components for one token; empty means outside."""

    components: tuple[LabelComponent, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def is_outside(self) -> bool:
        return not self.components

    def __iter__(self):
        return iter(self.components)

    def __len__(self) -> int:
        return len(self.components)

    def __str__(self) -> str:
        if not self.components:
            return OUTSIDE
        return "|".join(str(c) for c in self.components)

    @classmethod
    def parse(cls, text: str) -> "Multilabel":
        if text == OUTSIDE:
            return cls()
        if not text:
            raise LabelParseError("empty label string")
        parts = text.split("|")
        if any(not p for p in parts):
            raise LabelParseError(f"stray '|' in label: {text!r}")
        return cls(tuple(LabelComponent.parse(p) for p in parts))


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    mentions: frozenset[Mention] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "mentions", frozenset(self.mentions))
        if not self.tokens:
            raise ValueError("sentence must contain at least one token")
        for m in self.mentions:
            if m.span.end > len(self.tokens):
                raise ValueError(
                    f"mention {m.entity_type}({m.span.start},{m.span.end}) "
                    f"exceeds sentence length {len(self.tokens)}"
                )

    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]


@dataclass
class LabelAlphabet:
    """Bidirectional map between label strings and dense ids.

    Id 0 is the reserved symbol ("O" for multilabel alphabets, "<eow>" for
    component alphabets). Looking up an unseen string falls back to id 0 and
    increments ``fallbacks`` so silent label loss is observable.
    """

    strings: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False)
    fallbacks: int = field(default=0, init=False, compare=False)

    def __post_init__(self) -> None:
        self.strings = tuple(self.strings)
        if not self.strings:
            raise ValueError("alphabet needs at least the reserved symbol")
        self.index = {s: i for i, s in enumerate(self.strings)}
        if len(self.index) != len(self.strings):
            raise ValueError("alphabet strings must be distinct")

    @property
    def reserved(self) -> str:
        return self.strings[0]

    def __len__(self) -> int:
        return len(self.strings)

    def __contains__(self, label: str) -> bool:
        return label in self.index

    def id_of(self, label: str) -> int:
        """Dense id of ``label``; unseen labels fall back to the reserved id 0."""
        idx = self.index.get(label)
        if idx is None:
            self.fallbacks += 1
            return 0
        return idx

    def string_of(self, idx: int) -> str:
        return self.strings[idx]


def build_alphabet(labels, reserved: str = OUTSIDE) -> LabelAlphabet:
    """Alphabet with the reserved symbol at id 0, then first-occurrence order."""
    strings = [reserved]
    seen = {reserved}
    for label in labels:
        if label not in seen:
            seen.add(label)
            strings.append(label)
    return LabelAlphabet(tuple(strings))
