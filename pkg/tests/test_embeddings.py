import numpy as np
import pytest

from nestner.autodiff import Parameters, Tape
from nestner.core import Sentence, Token
from nestner.corpus import UNK, TaggedCorpus, build_vocabulary
from nestner.embeddings import (
    EmbeddingConfig,
    PretrainedFormatError,
    PretrainedTable,
    TokenEmbedder,
    load_pretrained,
)


@pytest.fixture
def vocab():
    corpus = TaggedCorpus(
        (
            Sentence((Token("Court", pos="N"), Token("us", pos="N"), Token("ab"))),
            Sentence((Token("Court", pos="N"),)),
        )
    )
    return build_vocabulary(corpus)


def make_embedder(vocab, config, pretrained=None, seed=0):
    embedder = TokenEmbedder(config, vocab, pretrained)
    params = Parameters()
    embedder.register(params, np.random.default_rng(seed))
    return embedder, params


class TestLoadPretrained:
    def test_plain_rows(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("a 1.0 2.0\nb 3.0 4.0\n", encoding="utf-8")
        table = load_pretrained(path, 2)
        assert len(table) == 2
        np.testing.assert_array_equal(table.vector("b"), [3.0, 4.0])

    def test_header_line_skipped(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("2 2\na 1.0 2.0\nb 3.0 4.0\n", encoding="utf-8")
        table = load_pretrained(path, 2)
        assert len(table) == 2
        np.testing.assert_array_equal(table.vector("a"), [1.0, 2.0])

    def test_wrong_width_reports_line(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("a 1.0 2.0\nb 1.0 2.0 3.0\n", encoding="utf-8")
        with pytest.raises(PretrainedFormatError) as err:
            load_pretrained(path, 2)
        assert ":2" in str(err.value)

    def test_non_numeric_field(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("a x y\n", encoding="utf-8")
        with pytest.raises(PretrainedFormatError):
            load_pretrained(path, 2)

    def test_header_dim_mismatch(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("5 3\n", encoding="utf-8")
        with pytest.raises(PretrainedFormatError):
            load_pretrained(path, 2)

    def test_duplicates_keep_first(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("a 1.0 2.0\na 9.0 9.0\n", encoding="utf-8")
        table = load_pretrained(path, 2)
        np.testing.assert_array_equal(table.vector("a"), [1.0, 2.0])


class TestPretrainedTable:
    def test_unknown_form_is_zero(self):
        table = PretrainedTable({"a": 0}, np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(table.vector("nope"), [0.0, 0.0])

    def test_lowercase_fallback(self):
        table = PretrainedTable({"court": 0}, np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(table.vector("Court"), [1.0, 2.0])

    def test_unk_sentinel_is_zero_even_if_present(self):
        table = PretrainedTable({UNK: 0}, np.array([[5.0]]))
        np.testing.assert_array_equal(table.vector(UNK), [0.0])

    def test_matrix_frozen(self):
        table = PretrainedTable({"a": 0}, np.array([[1.0]]))
        assert not table.matrix.flags.writeable
        with pytest.raises(ValueError):
            table.matrix[0, 0] = 2.0


class TestEmbeddingConfig:
    def test_token_dim_is_sum_of_enabled_parts(self):
        config = EmbeddingConfig(
            pretrained_dim=300, trainable_dim=256, char_dim=128, char_rnn_dim=128
        )
        assert config.token_dim == 300 + 256 + 256

    def test_pos_requires_resolved_width(self):
        config = EmbeddingConfig(trainable_dim=4, char_dim=0, char_rnn_dim=0, use_pos_onehot=True)
        with pytest.raises(ValueError):
            config.token_dim

    def test_char_dims_enabled_together(self):
        with pytest.raises(ValueError):
            EmbeddingConfig(char_dim=8, char_rnn_dim=0)


class TestTokenVector:
    def test_full_width_812(self, vocab, tmp_path):
        path = tmp_path / "vec.txt"
        rng = np.random.default_rng(0)
        rows = "\n".join(
            w + " " + " ".join(f"{x:.4f}" for x in rng.standard_normal(300))
            for w in ("court", "us")
        )
        path.write_text(rows + "\n", encoding="utf-8")
        table = load_pretrained(path, 300)
        config = EmbeddingConfig(
            pretrained_dim=300, trainable_dim=256, char_dim=128, char_rnn_dim=128
        )
        embedder, params = make_embedder(vocab, config, table)
        vec = embedder.token_vector(Tape(params), Token("Court"))
        assert vec.shape == (812,)

    def test_unknown_form_pretrained_slice_is_zero(self, vocab):
        table = PretrainedTable({"court": 0}, np.ones((1, 4)))
        config = EmbeddingConfig(pretrained_dim=4, trainable_dim=3, char_dim=0, char_rnn_dim=0)
        embedder, params = make_embedder(vocab, config, table)
        vec = embedder.token_vector(Tape(params), Token("martian"))
        np.testing.assert_array_equal(vec.value[:4], np.zeros(4))

    def test_eval_mode_deterministic(self, vocab):
        config = EmbeddingConfig(trainable_dim=5, char_dim=4, char_rnn_dim=4)
        embedder, params = make_embedder(vocab, config)
        one = embedder.token_vector(Tape(params), Token("Court")).value
        two = embedder.token_vector(Tape(params), Token("Court")).value
        np.testing.assert_array_equal(one, two)

    def test_depends_only_on_token_attributes(self, vocab):
        # the same token yields the same vector no matter the surrounding sentence
        config = EmbeddingConfig(trainable_dim=5, char_dim=4, char_rnn_dim=4)
        embedder, params = make_embedder(vocab, config)
        token = Token("us", pos="N")
        tape = Tape(params)
        np.testing.assert_array_equal(
            embedder.token_vector(tape, token).value,
            embedder.token_vector(Tape(params), token).value,
        )

    def test_pos_onehot_and_unknown_pos(self, vocab):
        config = EmbeddingConfig(
            trainable_dim=2, char_dim=0, char_rnn_dim=0,
            use_pos_onehot=True, pos_dim=vocab.n_pos,
        )
        embedder, params = make_embedder(vocab, config)
        known = embedder.token_vector(Tape(params), Token("Court", pos="N")).value
        assert known[2:].tolist() == [1.0]
        unknown = embedder.token_vector(Tape(params), Token("Court", pos="XYZ")).value
        assert unknown[2:].tolist() == [0.0]

    def test_lookup_form_overrides_tables_not_chars(self, vocab):
        config = EmbeddingConfig(trainable_dim=3, char_dim=4, char_rnn_dim=4)
        embedder, params = make_embedder(vocab, config)
        raw = embedder.token_vector(Tape(params), Token("Court")).value
        dropped = embedder.token_vector(Tape(params), Token("Court"), lookup_form=UNK).value
        # the trainable slice moved to the unk row, the char slice is unchanged
        assert not np.array_equal(raw[:3], dropped[:3])
        np.testing.assert_array_equal(raw[3:], dropped[3:])

    def test_lookup_form_also_blanks_pretrained_slice(self, vocab):
        table = PretrainedTable({"court": 0}, np.ones((1, 2)))
        config = EmbeddingConfig(pretrained_dim=2, trainable_dim=2, char_dim=0, char_rnn_dim=0)
        embedder, params = make_embedder(vocab, config, table)
        raw = embedder.token_vector(Tape(params), Token("Court")).value
        dropped = embedder.token_vector(Tape(params), Token("Court"), lookup_form=UNK).value
        np.testing.assert_array_equal(raw[:2], [1.0, 1.0])
        np.testing.assert_array_equal(dropped[:2], [0.0, 0.0])

    def test_lemma_slice_uses_lemma_table(self):
        corpus = TaggedCorpus((Sentence((Token("walks", lemma="walk"),)),))
        vocab = build_vocabulary(corpus)
        config = EmbeddingConfig(trainable_dim=2, lemma_dim=3, char_dim=0, char_rnn_dim=0)
        embedder, params = make_embedder(vocab, config)
        vec = embedder.token_vector(Tape(params), Token("walks", lemma="walk"))
        np.testing.assert_array_equal(
            vec.value[2:], params["embed.lemma"][vocab.lemma_id("walk")]
        )

    def test_contextual_slice_appended(self, vocab):
        config = EmbeddingConfig(trainable_dim=2, char_dim=0, char_rnn_dim=0, contextual_dim=3)
        embedder, params = make_embedder(vocab, config)
        row = np.array([7.0, 8.0, 9.0])
        vec = embedder.token_vector(Tape(params), Token("Court"), contextual_row=row)
        np.testing.assert_array_equal(vec.value[2:], row)
        with pytest.raises(ValueError):
            embedder.token_vector(Tape(params), Token("Court"))


class TestCharBiGru:
    def test_direction_symmetry(self, vocab):
        """Reversing characters and swapping direction parameters swaps the halves."""
        config = EmbeddingConfig(trainable_dim=0, char_dim=4, char_rnn_dim=3)
        embedder, params = make_embedder(vocab, config, seed=2)
        before = embedder.token_vector(Tape(params), Token("ab")).value.copy()

        swapped = Parameters()
        for fw_name, bw_name in zip(TokenEmbedder.CHAR_FW, TokenEmbedder.CHAR_BW):
            swapped.add(fw_name, params[bw_name])
            swapped.add(bw_name, params[fw_name])
        swapped.add(TokenEmbedder.CHAR_TABLE, params[TokenEmbedder.CHAR_TABLE])
        after = embedder.token_vector(Tape(swapped), Token("ba")).value

        np.testing.assert_array_equal(after[:3], before[3:])
        np.testing.assert_array_equal(after[3:], before[:3])

    def test_pretrained_rows_receive_no_gradient(self, vocab):
        """The pretrained slice is a frozen constant: nothing to train, nothing trained."""
        table = PretrainedTable({"court": 0}, np.full((1, 2), 3.0))
        config = EmbeddingConfig(pretrained_dim=2, trainable_dim=2, char_dim=0, char_rnn_dim=0)
        embedder, params = make_embedder(vocab, config, table)
        snapshot = table.matrix.copy()
        tape = Tape(params)
        vec = embedder.token_vector(tape, Token("Court"))
        grads = tape.backward(tape.sum(vec))
        assert all(not name.startswith("pretrained") for name in params.names())
        assert set(grads.dense) | set(grads.rows) <= set(params.names())
        np.testing.assert_array_equal(table.matrix, snapshot)

    def test_register_requires_table_when_enabled(self, vocab):
        config = EmbeddingConfig(pretrained_dim=4, trainable_dim=2, char_dim=0, char_rnn_dim=0)
        with pytest.raises(ValueError):
            TokenEmbedder(config, vocab, None)
