import pytest

from app.core.exceptions import FormatError, UsageError
from app.services.text import BOS, EOS, PAD, UNK, Vocabulary, build_vocab, decode, encode, tokenize


class TestTokenize:

    def test_lowercase_and_punctuation(self):
        assert tokenize("A dog is playing!") == ["a", "dog", "is", "playing"]

    def test_empty(self):
        assert tokenize("") == []

    def test_possessive_split(self):
        assert tokenize("a rubik's cube") == ["a", "rubik", "'s", "cube"]

    def test_hyphens_and_digits_verbatim(self):
        assert tokenize("A 3-year-old plays 2 games.") == ["a", "3-year-old", "plays", "2", "games"]

    @pytest.mark.parametrize("raw", ["A man's hat, then -- a dog!", "the cat's toy's box", "  x  y ", "e-mail 42"])
    def test_idempotent_under_rejoin(self, raw):
        once = tokenize(raw)
        assert tokenize(" ".join(once)) == once


class TestVocabulary:

    def test_min_freq_drops_rare_words(self):
        vocab = build_vocab([["dog", "cat"], ["dog", "cat"], ["dog"]], min_freq=3)
        assert "dog" in vocab
        assert "cat" not in vocab
        assert encode(["cat"], vocab) == [UNK]

    def test_min_freq_one_keeps_everything(self):
        vocab = build_vocab([["a", "b"], ["c"]], min_freq=1)
        assert set(vocab.tokens) == {"a", "b", "c"}

    def test_ordering_count_then_lexicographic(self):
        vocab = build_vocab([["b", "a", "c", "c"]], min_freq=1)
        assert vocab.tokens == ["c", "a", "b"]
        assert vocab.lookup("a") < vocab.lookup("b")

    def test_reserved_ids(self):
        vocab = build_vocab([["<bos>", "x"]], min_freq=1)
        assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)
        assert vocab.token(0) == "<pad>"
        assert vocab.lookup("x") == 4
        assert len(vocab) == 5

    def test_deterministic(self):
        corpus = [["z", "y", "x", "y"], ["x", "w"]]
        assert build_vocab(corpus, 1).tokens == build_vocab(corpus, 1).tokens
        assert build_vocab(corpus, 1).digest() == build_vocab(corpus, 1).digest()

    def test_lookup_of_every_id_round_trips(self):
        vocab = build_vocab([["a", "b", "c"]], min_freq=1)
        assert all(vocab.lookup(vocab.token(i)) == i for i in range(len(vocab)))

    def test_empty_corpus(self):
        with pytest.raises(UsageError):
            build_vocab([])

    def test_json_round_trip(self, tmp_path):
        vocab = build_vocab([["a", "b", "a"]], min_freq=1)
        vocab.save(tmp_path / "v.json")
        loaded = Vocabulary.load(tmp_path / "v.json")
        assert loaded.tokens == vocab.tokens
        assert loaded.min_freq == 1

    def test_bad_vocab_file(self, tmp_path):
        (tmp_path / "v.json").write_text("{not json")
        with pytest.raises(FormatError):
            Vocabulary.load(tmp_path / "v.json")


class TestEncodeDecode:

    def test_round_trip(self):
        vocab = build_vocab([["a", "man", "is", "riding"]], min_freq=1)
        assert decode(encode(["a", "man", "is", "riding"], vocab), vocab) == "a man is riding"

    def test_oov(self):
        vocab = build_vocab([["a"]], min_freq=1)
        assert encode(["zebra"], vocab) == [3]

    def test_empty(self):
        vocab = build_vocab([["a"]], min_freq=1)
        assert encode([], vocab) == []
        assert decode([], vocab) == ""

    def test_decode_out_of_range(self):
        vocab = build_vocab([["a"]], min_freq=1)
        with pytest.raises(UsageError):
            decode([len(vocab)], vocab)
