import csv
import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal
from scipy import stats

from .. import checkpoint
from ..corpus import EmptyCorpusError, SentencePair, SynthConfig, generate_synthetic
from ..errors import ConfigError
from ..mlm import *
from ..model import FreezePolicy, FreezePolicyError, ModelConfig, init, set_freeze
from ..tokenizer import ROMAN_UR, UR, build_vocab, encode

LETTERS = "abcdefgh"


@pytest.fixture(scope="module")
def vocab():
    return build_vocab([SentencePair("ابپ", LETTERS + " ")])


def mlm_state(vocab_size, d_model=8, ffn_dim=16, max_len=16, seed=0):
    config = ModelConfig(vocab_size=vocab_size, d_model=d_model, n_heads=2, enc_layers=2, dec_layers=2,
                         ffn_dim=ffn_dim, max_len=max_len, dropout_rate=0.0, seed=seed)
    return set_freeze(init(config), FreezePolicy.MLM)


class TestMaskingConfig:
    def test_rate_bounds(self):
        MaskingConfig().validate()
        for rate in (0.0, 1.0, -0.1):
            with pytest.raises(ConfigError):
                MaskingConfig(mask_rate=rate).validate()

    def test_zero_rate_outside_strict_mode(self):
        MaskingConfig(mask_rate=0.0, strict=False).validate()


class TestMaskTokens:
    def test_exact_count(self, vocab):
        rng = np.random.default_rng(0)
        config = MaskingConfig(mask_rate=0.15, seed=3)
        for index in range(1000):
            text = "".join(rng.choice(list(LETTERS + " "), size=rng.integers(0, 41)))
            seq = encode(vocab, text, ROMAN_UR, max_len=48)
            maskable = maskable_positions(seq.ids, vocab)
            masked, labels = mask_tokens(seq, vocab, config, index)
            positions = [i for i, label in enumerate(labels) if label != IGNORE]
            assert len(positions) == int(0.15 * len(maskable))
            assert set(positions) <= set(maskable)
            assert sum(1 for token in masked.ids if token == vocab.mask_id) == len(positions)
            for i in positions:
                assert labels[i] == seq.ids[i]

    def test_hundred_positions(self, vocab):
        seq = encode(vocab, "a" * 100, ROMAN_UR, max_len=104)
        _, labels = mask_tokens(seq, vocab, MaskingConfig())
        assert sum(1 for label in labels if label != IGNORE) == 15

    def test_specials_never_masked(self, vocab):
        seq = encode(vocab, "abc", UR, max_len=12)
        masked, labels = mask_tokens(seq, vocab, MaskingConfig(mask_rate=0.9))
        assert masked.ids[0] == vocab.lang_id(UR)
        assert masked.ids[4:] == seq.ids[4:]
        assert labels[0] == IGNORE and all(label == IGNORE for label in labels[4:])
        assert masked.attention_mask == seq.attention_mask

    def test_no_maskable_positions(self, vocab):
        seq = encode(vocab, "", ROMAN_UR, max_len=6)
        masked, labels = mask_tokens(seq, vocab, MaskingConfig(mask_rate=0.5))
        assert masked.ids == seq.ids
        assert labels == [IGNORE] * 6

    def test_unknown_characters_are_maskable(self, vocab):
        seq = encode(vocab, "zzzz", ROMAN_UR, max_len=8)
        assert maskable_positions(seq.ids, vocab) == [1, 2, 3, 4]

    def test_deterministic(self, vocab):
        seq = encode(vocab, LETTERS * 3, ROMAN_UR, max_len=32)
        config = MaskingConfig(seed=11)
        assert mask_tokens(seq, vocab, config, 5) == mask_tokens(seq, vocab, config, 5)

    def test_uniform_selection(self, vocab):
        seq = encode(vocab, "abcdefg", ROMAN_UR, max_len=10)
        config = MaskingConfig(mask_rate=0.15)
        counts = np.zeros(len(seq.ids), dtype=np.int64)
        for index in range(10000):
            _, labels = mask_tokens(seq, vocab, config, index)
            chosen = [i for i, label in enumerate(labels) if label != IGNORE]
            assert len(chosen) == 1
            counts[chosen[0]] += 1
        observed = counts[1:8]
        assert observed.sum() == 10000
        assert stats.chisquare(observed).pvalue > 0.001


class TestSamples:
    def test_modes(self):
        pairs = [SentencePair("اب", "ab"), SentencePair("پ", "p")]
        assert monolingual_samples(pairs, CorpusMode.ROMAN_ONLY) == [("ab", ROMAN_UR), ("p", ROMAN_UR)]
        both = monolingual_samples(pairs, "roman_plus_urdu")
        assert both == [("ab", ROMAN_UR), ("اب", UR), ("p", ROMAN_UR), ("پ", UR)]
        assert len(both) == 2 * len(pairs)


class TestPretrain:
    def test_requires_mlm_policy(self, vocab):
        state = set_freeze(mlm_state(vocab.size), FreezePolicy.NONE)
        with pytest.raises(FreezePolicyError) as e:
            pretrain(state, vocab, [("ab", ROMAN_UR)], PretrainConfig(epochs=1), MaskingConfig())
        assert "mlm_policy" in e.exconly()

    def test_empty_corpus(self, vocab):
        with pytest.raises(EmptyCorpusError):
            pretrain(mlm_state(vocab.size), vocab, [], PretrainConfig(epochs=1), MaskingConfig())

    def test_run_files(self, vocab, tmp_path):
        state = mlm_state(vocab.size)
        frozen = {name: state.params.get(name, state.buffers.get(name)).copy() for name in state.frozen_names()}
        samples = [("abc", ROMAN_UR), ("ابپ", UR), ("hgf e", ROMAN_UR), ("dd", ROMAN_UR), ("پا", UR)]
        config = PretrainConfig(corpus_mode="roman_only", epochs=2, batch_size=2, grad_accum_steps=2,
                                learning_rate=1e-3, max_len=16)
        state, record = pretrain(state, vocab, samples, config, MaskingConfig(mask_rate=0.3),
                                 run_dir=str(tmp_path))
        assert len(record.losses) == 2
        assert len(record.masked_accuracy) == 2
        assert all(0.0 <= a <= 1.0 for a in record.masked_accuracy)
        assert state.step == 4
        for name, value in frozen.items():
            assert_array_equal(state.params.get(name, state.buffers.get(name)), value)

        loaded = checkpoint.load(record.checkpoints[-1])
        assert os.path.basename(record.checkpoints[-1]) == "mlm_epoch2.ckpt"
        assert (loaded.phase, loaded.epoch) == ("mlm", 2)
        assert loaded.meta == {"corpus_mode": "roman_only"}
        assert loaded.state.frozen_names() == state.frozen_names()

        with open(tmp_path / "mlm_loss.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["epoch", "split", "loss"]
        assert [row[0] for row in rows[1:]] == ["0", "1", "2"]
        assert float(rows[1][2]) == record.initial_loss

    @pytest.mark.slow
    def test_copy_task(self):
        pairs = generate_synthetic(SynthConfig(group_count=500, max_variants=1, sentence_len_range=(1, 2)))
        vocab = build_vocab(pairs)
        state = mlm_state(vocab.size, d_model=32, ffn_dim=64, max_len=48)
        config = PretrainConfig(corpus_mode="roman_only", epochs=2, batch_size=16, grad_accum_steps=1,
                                learning_rate=3e-3, warmup_ratio=0.05, max_len=48)
        masking = MaskingConfig(mask_rate=0.0, strict=False)
        _, record = pretrain(state, vocab, monolingual_samples(pairs, config.corpus_mode), config, masking)
        assert record.losses[-1] < 0.1

    @pytest.mark.slow
    def test_loss_halves(self):
        pairs = generate_synthetic(SynthConfig(group_count=300, sentence_len_range=(1, 2)))
        vocab = build_vocab(pairs)
        state = mlm_state(vocab.size, d_model=32, ffn_dim=64, max_len=48)
        config = PretrainConfig(epochs=4, batch_size=16, grad_accum_steps=1, learning_rate=3e-3, max_len=48)
        _, record = pretrain(state, vocab, monolingual_samples(pairs, config.corpus_mode), config,
                             MaskingConfig())
        assert record.losses[-1] < 0.5 * record.initial_loss
