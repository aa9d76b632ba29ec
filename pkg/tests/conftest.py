import pytest

from nestner.core import Mention, Sentence, Span, Token

# Nested court sentence: an ORG stretching over three GPEs, the standard
# worked example for the encoding.
COURT_FORMS = ("in", "the", "US", "Federal", "District", "Court", "of", "New", "Mexico", ".")
COURT_MENTIONS = frozenset(
    {
        Mention("ORG", Span(1, 9)),
        Mention("GPE", Span(2, 3)),
        Mention("GPE", Span(4, 5)),
        Mention("GPE", Span(7, 9)),
    }
)
COURT_LABELS = (
    "O",
    "B-ORG",
    "I-ORG|U-GPE",
    "I-ORG",
    "I-ORG|U-GPE",
    "I-ORG",
    "I-ORG",
    "I-ORG|B-GPE",
    "L-ORG|L-GPE",
    "O",
)


def mention(entity_type: str, start: int, end: int) -> Mention:
    return Mention(entity_type, Span(start, end))


@pytest.fixture
def court_sentence() -> Sentence:
    return Sentence(tuple(Token(f) for f in COURT_FORMS), COURT_MENTIONS)


@pytest.fixture
def court_conll_text() -> str:
    return "".join(f"{f}\t{l}\n" for f, l in zip(COURT_FORMS, COURT_LABELS))
