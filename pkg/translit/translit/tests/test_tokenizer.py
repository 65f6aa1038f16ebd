import numpy as np
import pytest
from numpy.testing import assert_array_equal

from ..corpus import SentencePair
from ..tokenizer import *


@pytest.fixture
def vocab():
    return build_vocab([SentencePair("کیا ہے", "kya hai"), SentencePair("حال", "haal")])


class TestVocabulary:
    def test_layout(self, vocab):
        assert tuple(vocab.symbols[:7]) == SPECIALS + DEFAULT_LANGS
        assert vocab.pad_id == 0
        assert vocab.first_char_id == len(SPECIALS) + 2
        chars = vocab.symbols[vocab.first_char_id:]
        assert chars == sorted(chars)
        assert set(chars) == set("کیا ہےkyhaiحلl")
        assert vocab.lang_id(UR) == len(SPECIALS) + 1

    def test_unknown_language(self, vocab):
        with pytest.raises(VocabularyError) as e:
            vocab.lang_id("__fr__")
        assert "Unknown language tag '__fr__'." in e.exconly()

    def test_save_load(self, vocab, tmp_path):
        path = str(tmp_path / "vocab.txt")
        vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded == vocab
        assert loaded.langs == DEFAULT_LANGS

    def test_truncated_file(self, vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        vocab.save(str(path))
        path.write_text(path.read_text(encoding="utf-8")[:-1], encoding="utf-8")
        with pytest.raises(VocabularyError):
            Vocabulary.load(str(path))

    def test_bad_layout(self):
        with pytest.raises(VocabularyError):
            Vocabulary(["a", "b"])
        with pytest.raises(VocabularyError):
            Vocabulary(list(SPECIALS) + list(DEFAULT_LANGS) + ["ab"])

    def test_empty_corpus(self):
        with pytest.raises(VocabularyError):
            build_vocab([])

    def test_independent_of_row_order(self):
        rng = np.random.default_rng(3)
        letters = list("abkhyiابکھی")

        def word():
            return "".join(letters[i] for i in rng.integers(len(letters), size=rng.integers(1, 8)))

        pairs = [SentencePair(word(), word()) for _ in range(200)]
        expected = build_vocab(pairs)
        for _ in range(5):
            shuffled = [pairs[i] for i in rng.permutation(len(pairs))]
            assert build_vocab(shuffled) == expected


class TestEncode:
    def test_layout(self, vocab):
        seq = encode(vocab, "hai", ROMAN_UR, max_len=8)
        assert seq.ids[0] == vocab.lang_id(ROMAN_UR)
        assert seq.ids[1:4] == [vocab.index[c] for c in "hai"]
        assert seq.ids[4] == vocab.eos_id
        assert seq.ids[5:] == [vocab.pad_id] * 3
        assert seq.attention_mask == [1] * 5 + [0] * 3
        assert seq.lang == ROMAN_UR

    def test_truncation(self, vocab):
        seq = encode(vocab, "haal hai kya", ROMAN_UR, max_len=6)
        assert len(seq.ids) == 6
        assert decode(vocab, seq.ids) == "haal"
        assert seq.ids[-1] == vocab.eos_id

    def test_round_trip(self, vocab):
        for text, lang in (("kya hai", ROMAN_UR), ("کیا ہے", UR)):
            assert decode(vocab, encode(vocab, text, lang).ids) == text

    def test_unknown_characters(self, vocab):
        seq = encode(vocab, "kyz", ROMAN_UR, max_len=8)
        assert seq.ids[3] == vocab.unk_id
        assert decode(vocab, seq.ids) == "ky" + UNK_GLYPH

    def test_short_max_len(self, vocab):
        with pytest.raises(VocabularyError):
            encode(vocab, "kya", ROMAN_UR, max_len=1)

    def test_decode_out_of_range(self, vocab):
        with pytest.raises(VocabularyError) as e:
            decode(vocab, [vocab.size])
        assert "is out of range" in e.exconly()

    def test_decode_drops_specials(self, vocab):
        ids = [vocab.bos_id, vocab.mask_id, vocab.index["k"], vocab.eos_id, vocab.pad_id]
        assert decode(vocab, ids) == "k"


class TestBatch:
    def test_encode_batch(self, vocab):
        ids, mask = encode_batch(vocab, ["kya", "hai haal"], ROMAN_UR, max_len=12)
        assert ids.shape == (2, 12)
        assert ids.dtype == np.int64
        assert_array_equal(mask.sum(axis=1), [5, 10])

    def test_trim_batch(self, vocab):
        ids, _ = encode_batch(vocab, ["kya", "hai haal"], ROMAN_UR, max_len=12)
        trimmed = trim_batch(ids)
        assert trimmed.shape == (2, 10)
        assert_array_equal(trimmed, ids[:, :10])
        assert trim_batch(np.zeros((2, 4), dtype=np.int64)).shape == (2, 1)
