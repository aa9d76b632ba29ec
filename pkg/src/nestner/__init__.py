"""Nested named entity recognition via BILOU multilabel linearization.

Mentions of nested entities are linearized into one multilabel per token and
tagged either with a BiLSTM-CRF over whole multilabels or with a seq2seq
decoder that emits one BILOU component at a time under hard attention.
"""

from .core import (
    LabelAlphabet,
    LabelComponent,
    LabelParseError,
    Mention,
    Multilabel,
    NestnerError,
    Sentence,
    Span,
    Token,
    build_alphabet,
    mention_precedes,
    mention_sort_key,
)
from .codec import (
    EOW,
    DecodeError,
    EncodedSentence,
    decode,
    encode,
    flatten,
    unflatten,
)
from .metrics import Score, score_mentions

__version__ = "0.1.0"

__all__ = [
    "EOW",
    "DecodeError",
    "EncodedSentence",
    "LabelAlphabet",
    "LabelComponent",
    "LabelParseError",
    "Mention",
    "Multilabel",
    "NestnerError",
    "Score",
    "Sentence",
    "Span",
    "Token",
    "build_alphabet",
    "decode",
    "encode",
    "flatten",
    "mention_precedes",
    "mention_sort_key",
    "score_mentions",
    "unflatten",
    "__version__",
]
