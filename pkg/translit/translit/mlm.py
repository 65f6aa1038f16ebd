"""Masked-language-model pretraining.

The encoder sees a sequence with a fixed fraction of its characters replaced
by MASK and the decoder reconstructs the whole original sequence. Pretraining
runs under the mlm freeze policy only.
"""
import csv
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from . import adamw, checkpoint
from .corpus import EmptyCorpusError
from .errors import ConfigError
from .finetune import steps_per_epoch, train_epoch
from .model import MLM_FROZEN_PREFIXES, FreezePolicyError, forward
from .model import loss as token_loss
from .tokenizer import ROMAN_UR, UR, EncodedSequence, encode, trim_batch

logger = logging.getLogger(__name__)

IGNORE = -100


class CorpusMode(Enum):
    ROMAN_ONLY = "roman_only"
    ROMAN_PLUS_URDU = "roman_plus_urdu"


@dataclass
class MaskingConfig:
    """``strict=False`` additionally allows a zero rate (masking disabled)."""
    mask_rate: float = 0.15
    seed: int = 0
    strict: bool = True

    def validate(self):
        low_ok = self.mask_rate > 0 or (not self.strict and self.mask_rate == 0)
        if not (low_ok and self.mask_rate < 1):
            raise ConfigError("mask_rate must be in (0, 1), got {}.".format(self.mask_rate))


@dataclass
class PretrainConfig:
    corpus_mode: CorpusMode = CorpusMode.ROMAN_PLUS_URDU
    epochs: int = 4
    batch_size: int = 128
    grad_accum_steps: int = 4
    learning_rate: float = 1e-4
    warmup_ratio: float = 0.1
    weight_decay: float = 0.02
    seed: int = 0
    max_len: int = 128

    def validate(self):
        self.corpus_mode = CorpusMode(self.corpus_mode)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1, got {}.".format(self.epochs))
        if self.batch_size < 1 or self.grad_accum_steps < 1:
            raise ConfigError("batch_size and grad_accum_steps must be positive.")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive, got {}.".format(self.learning_rate))


@dataclass
class PretrainRecord:
    initial_loss: float
    losses: List[float] = field(default_factory=list)
    masked_accuracy: List[float] = field(default_factory=list)
    checkpoints: List[Optional[str]] = field(default_factory=list)


def maskable_positions(ids, vocab):
    """Indices of character tokens (UNK included); specials, language tokens and MASK are excluded."""
    return [i for i, token_id in enumerate(ids)
            if token_id >= vocab.first_char_id or token_id == vocab.unk_id]


def mask_tokens(seq, vocab, config, index=0):
    """
    Replace exactly floor(mask_rate * maskable) positions by MASK.

    INPUTS
    =======
    seq: EncodedSequence.
    vocab: its Vocabulary.
    config: MaskingConfig.
    index (optional): sequence index; positions are drawn without replacement
                      from ``np.random.default_rng([config.seed, index])``.

    RETURNS
    ========
    (masked EncodedSequence, labels): labels hold the original id at masked
    positions and IGNORE elsewhere.
    """
    config.validate()
    positions = maskable_positions(seq.ids, vocab)
    count = math.floor(round(config.mask_rate * len(positions), 9))
    ids = list(seq.ids)
    labels = [IGNORE] * len(ids)
    if count:
        rng = np.random.default_rng([config.seed, index])
        for choice in rng.choice(len(positions), size=count, replace=False):
            position = positions[choice]
            labels[position] = ids[position]
            ids[position] = vocab.mask_id
    return EncodedSequence(ids, list(seq.attention_mask), seq.lang), labels


def monolingual_samples(pairs, mode):
    """
    (text, language) samples for pretraining.

    roman_only keeps the Roman-Urdu side; roman_plus_urdu interleaves both
    sides of every pair as independent samples, giving 2N samples for N pairs.
    """
    mode = CorpusMode(mode)
    samples = []
    for pair in pairs:
        samples.append((pair.target, ROMAN_UR))
        if mode is CorpusMode.ROMAN_PLUS_URDU:
            samples.append((pair.source, UR))
    return samples


def _encode_epoch(vocab, samples, masking, max_len, epoch):
    src, tgt, labels = [], [], []
    for i, (text, lang) in enumerate(samples):
        original = encode(vocab, text, lang, max_len)
        masked, label = mask_tokens(original, vocab, masking, index=epoch * len(samples) + i)
        src.append(masked.ids)
        tgt.append(original.ids)
        labels.append(label)
    return (np.array(src, dtype=np.int64), np.array(tgt, dtype=np.int64),
            np.array(labels, dtype=np.int64))


def masked_accuracy(state, src_ids, tgt_ids, labels):
    """Share of masked positions that eval-mode teacher forcing predicts correctly."""
    logits = forward(state, src_ids, tgt_ids)
    predicted = np.argmax(logits[:, :-1], axis=-1)
    masked = labels[:, 1:] != IGNORE
    if not masked.any():
        return 1.0
    return float((predicted[masked] == tgt_ids[:, 1:][masked]).mean())


def _check_policy(state):
    expected = sorted(name for name in state.frozen if name.startswith(MLM_FROZEN_PREFIXES))
    if state.frozen_names() != expected:
        raise FreezePolicyError("Pretraining requires the mlm_policy freeze mask; apply set_freeze first.")


def pretrain(state, vocab, samples, config, masking, run_dir=None, progress=False, probe_size=256):
    """
    Denoising pretraining on tagged monolingual samples.

    INPUTS
    =======
    state: ModelState under the mlm freeze policy; updated in place.
    vocab: Vocabulary containing MASK.
    samples: list of (text, language tag), see monolingual_samples.
    config: PretrainConfig.
    masking: MaskingConfig.
    run_dir (optional): receives ``mlm_epoch{e}.ckpt`` per epoch and ``mlm_loss.csv``.
    probe_size (optional): samples used for the initial loss and masked accuracy.

    RETURNS
    ========
    (state, PretrainRecord)
    """
    config.validate()
    masking.validate()
    _check_policy(state)
    if not samples:
        raise EmptyCorpusError("Pretraining needs at least one sample.")

    adamw.reset(state)
    optimizer = adamw.AdamWConfig(lr=config.learning_rate, weight_decay=config.weight_decay)
    total = config.epochs * steps_per_epoch(len(samples), config.batch_size, config.grad_accum_steps)

    def schedule(s):
        return adamw.learning_rate(s, total, config.learning_rate, config.warmup_ratio)

    probe = _encode_epoch(vocab, samples[:probe_size], masking, config.max_len, 0)
    width = trim_batch(probe[1]).shape[1]
    probe = tuple(a[:, :width] for a in probe)
    record = PretrainRecord(token_loss(forward(state, probe[0], probe[1]), probe[1])[0])
    for epoch in range(1, config.epochs + 1):
        src_ids, tgt_ids, _ = _encode_epoch(vocab, samples, masking, config.max_len, epoch)
        rng = np.random.default_rng([config.seed, 0, epoch])
        epoch_loss = train_epoch(state, src_ids, tgt_ids, optimizer, schedule, config.batch_size,
                                 config.grad_accum_steps, rng, progress, desc="mlm epoch {}".format(epoch))
        record.losses.append(epoch_loss)
        record.masked_accuracy.append(masked_accuracy(state, *probe))
        path = None
        if run_dir is not None:
            path = checkpoint.save(state, os.path.join(run_dir, "mlm_epoch{}.ckpt".format(epoch)), "mlm", epoch,
                                   {"corpus_mode": config.corpus_mode.value})
        record.checkpoints.append(path)
        logger.info("mlm epoch %d: loss %.4f masked accuracy %.3f", epoch, epoch_loss, record.masked_accuracy[-1])
    if run_dir is not None:
        write_loss_csv(os.path.join(run_dir, "mlm_loss.csv"), record)
    return state, record


def write_loss_csv(path, record):
    """Rows ``epoch,split,loss``; epoch 0 is the loss before training."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "split", "loss"])
        writer.writerow([0, "train", repr(record.initial_loss)])
        for epoch, value in enumerate(record.losses, start=1):
            writer.writerow([epoch, "train", repr(value)])
