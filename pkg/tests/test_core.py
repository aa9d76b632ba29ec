import pytest
from hypothesis import given, settings, strategies as st

from conftest import COURT_LABELS, mention
from nestner.core import (
    LabelComponent,
    LabelParseError,
    Mention,
    Multilabel,
    Sentence,
    Span,
    Token,
    build_alphabet,
    mention_precedes,
    mention_sort_key,
)


class TestToken:
    def test_plain(self):
        t = Token("Court", lemma="court", pos="NNP")
        assert (t.form, t.lemma, t.pos) == ("Court", "court", "NNP")

    @pytest.mark.parametrize("form", ["", "a b", "a\tb", "a\nb"])
    def test_rejects_whitespace(self, form):
        with pytest.raises(ValueError):
            Token(form)


class TestSpan:
    def test_half_open(self):
        assert len(Span(2, 3)) == 1

    @pytest.mark.parametrize("start,end", [(3, 3), (4, 2), (-1, 2)])
    def test_invalid(self, start, end):
        with pytest.raises(ValueError):
            Span(start, end)

    def test_contains_and_overlaps(self):
        assert Span(1, 9).contains(Span(2, 3))
        assert Span(1, 3).overlaps(Span(2, 5))
        assert not Span(1, 2).overlaps(Span(2, 3))


class TestMention:
    @pytest.mark.parametrize("bad", ["", "A|B", "-X", "A B"])
    def test_invalid_type(self, bad):
        with pytest.raises(ValueError):
            Mention(bad, Span(0, 1))

    def test_type_with_inner_dash_ok(self):
        assert Mention("work-of-art", Span(0, 1)).entity_type == "work-of-art"


class TestMentionPriority:
    def test_earlier_start_wins(self):
        # the ORG opening before the unit GPE keeps the first slot on "US"
        assert mention_precedes(mention("ORG", 1, 9), mention("GPE", 2, 3))

    def test_longer_wins_on_same_start(self):
        assert mention_precedes(mention("X", 0, 3), mention("Y", 0, 1))

    def test_equal_spans_break_lexicographically(self):
        a, b = mention("X", 2, 4), mention("Y", 2, 4)
        assert mention_precedes(a, b)
        assert sorted([b, a], key=mention_sort_key) == [a, b]

    @given(
        st.lists(
            st.tuples(
                st.sampled_from(["A", "B", "C"]),
                st.integers(0, 5),
                st.integers(1, 6),
            ),
            min_size=2,
            max_size=8,
        )
    )
    @settings(deadline=None)
    def test_strict_total_order(self, raw):
        mentions = [mention(t, s, max(s + 1, e)) for t, s, e in raw]
        for a in mentions:
            for b in mentions:
                if (a.entity_type, a.span) == (b.entity_type, b.span):
                    assert not mention_precedes(a, b) or not mention_precedes(b, a)
                else:
                    assert mention_precedes(a, b) != mention_precedes(b, a)
        for a in mentions:
            for b in mentions:
                for c in mentions:
                    if mention_precedes(a, b) and mention_precedes(b, c):
                        assert mention_precedes(a, c)

    @given(st.permutations(list(range(6))), st.data())
    def test_sorting_permutation_invariant(self, perm, data):
        base = [mention("T" + str(i % 2), i % 3, i % 3 + 1 + i % 2) for i in range(6)]
        shuffled = [base[i] for i in perm]
        assert sorted(shuffled, key=mention_sort_key) == sorted(base, key=mention_sort_key)


class TestMultilabelParse:
    def test_two_components(self):
        ml = Multilabel.parse("I-ORG|U-GPE")
        assert [str(c) for c in ml] == ["I-ORG", "U-GPE"]

    def test_outside(self):
        assert Multilabel.parse("O").is_outside
        assert str(Multilabel()) == "O"

    def test_double_last(self):
        assert str(Multilabel.parse("L-ORG|L-GPE")) == "L-ORG|L-GPE"

    @pytest.mark.parametrize(
        "bad", ["", "X-ORG", "ORG", "I-", "I-ORG|", "|I-ORG", "O|I-ORG", "I-ORG||U-GPE"]
    )
    def test_parse_errors_name_content(self, bad):
        with pytest.raises(LabelParseError) as err:
            Multilabel.parse(bad)
        if bad:
            assert bad in str(err.value) or bad.split("|")[0] in str(err.value)

    def test_component_rejects_bare_o(self):
        with pytest.raises(LabelParseError):
            LabelComponent.parse("O")

    @given(
        st.lists(
            st.tuples(st.sampled_from("BILU"), st.sampled_from(["ORG", "GPE", "per"])),
            min_size=0,
            max_size=4,
        )
    )
    def test_round_trip(self, parts):
        text = "O" if not parts else "|".join(f"{t}-{e}" for t, e in parts)
        assert str(Multilabel.parse(text)) == text


class TestSentence:
    def test_mention_bounds_checked(self):
        with pytest.raises(ValueError):
            Sentence((Token("a"),), frozenset({mention("X", 0, 2)}))

    def test_coerces_collections(self):
        s = Sentence([Token("a"), Token("b")], {mention("X", 0, 1)})
        assert isinstance(s.tokens, tuple)
        assert isinstance(s.mentions, frozenset)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Sentence(())


class TestAlphabet:
    def test_first_occurrence_order(self):
        alpha = build_alphabet(["O", "B-ORG", "O"])
        assert alpha.strings == ("O", "B-ORG")
        assert alpha.id_of("B-ORG") == 1 and alpha.id_of("O") == 0

    def test_court_labels_have_six_distinct(self):
        alpha = build_alphabet(COURT_LABELS)
        assert len(alpha) == 6

    def test_empty_input_keeps_reserved(self):
        alpha = build_alphabet([], reserved="<eow>")
        assert alpha.strings == ("<eow>",)

    def test_unseen_falls_back_with_counter(self):
        alpha = build_alphabet(["O", "B-ORG"])
        assert alpha.fallbacks == 0
        assert alpha.id_of("B-LOC") == 0
        assert alpha.fallbacks == 1

    def test_bijective(self):
        alpha = build_alphabet(["O", "A", "B"])
        for i, s in enumerate(alpha.strings):
            assert alpha.string_of(i) == s
            assert alpha.id_of(s) == i

    def test_duplicate_strings_rejected(self):
        from nestner.core import LabelAlphabet

        with pytest.raises(ValueError):
            LabelAlphabet(("O", "O"))
