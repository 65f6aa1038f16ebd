"""
Supervised fine-tuning in two phases.

Phase 1 trains on the primary corpus and checkpoints every epoch. Phase 2
reloads a chosen phase-1 checkpoint and adapts it to a secondary corpus,
scoring every registered evaluation set after each epoch so the trade-off
between the two domains can be followed.
"""
import csv
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from tqdm import tqdm

from . import adamw, checkpoint
from .corpus import EmptyCorpusError
from .errors import ConfigError
from .metrics import evaluate
from .model import FreezePolicyError, compute_gradients, greedy_batch
from .tokenizer import ROMAN_UR, UR, encode_batch, trim_batch

logger = logging.getLogger(__name__)


class Direction(Enum):
    """roman2ur reads the Roman-Urdu side of a pair and writes the Urdu side; ur2roman the reverse."""
    ROMAN2UR = "roman2ur"
    UR2ROMAN = "ur2roman"

    @property
    def source_lang(self):
        return ROMAN_UR if self is Direction.ROMAN2UR else UR

    @property
    def target_lang(self):
        return UR if self is Direction.ROMAN2UR else ROMAN_UR

    def sides(self, pair):
        """(input text, output text) of a SentencePair."""
        if self is Direction.ROMAN2UR:
            return pair.target, pair.source
        return pair.source, pair.target


class Phase(Enum):
    PHASE1 = "phase1"
    PHASE2 = "phase2"


@dataclass
class FinetuneConfig:
    direction: Direction = Direction.ROMAN2UR
    phase1_epochs: int = 15
    phase1_checkpoint_epoch: int = 5
    phase2_epochs: int = 5
    phase2_eval_epochs: Tuple[int, ...] = (2, 5)
    batch_size: int = 64
    grad_accum_steps: int = 4
    learning_rate: float = 1e-5
    warmup_ratio: float = 0.1
    weight_decay: float = 0.02
    seed: int = 0
    max_len: int = 128
    eval_batch_size: int = 64

    def validate(self):
        self.direction = Direction(self.direction)
        if self.phase1_epochs < 1 or self.phase2_epochs < 0:
            raise ConfigError("phase1_epochs must be >= 1 and phase2_epochs >= 0.")
        if not 1 <= self.phase1_checkpoint_epoch <= self.phase1_epochs:
            raise ConfigError("phase1_checkpoint_epoch {} is outside 1..{}.".format(
                self.phase1_checkpoint_epoch, self.phase1_epochs))
        for epoch in self.phase2_eval_epochs:
            if not 1 <= epoch <= self.phase2_epochs:
                raise ConfigError("phase2 eval epoch {} is outside 1..{}.".format(epoch, self.phase2_epochs))
        if self.batch_size < 1 or self.grad_accum_steps < 1 or self.eval_batch_size < 1:
            raise ConfigError("Batch sizes and grad_accum_steps must be positive.")
        if not 0 <= self.warmup_ratio <= 1:
            raise ConfigError("warmup_ratio must be in [0, 1], got {}.".format(self.warmup_ratio))
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be positive and weight_decay non-negative.")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    scores: Dict[str, Dict[str, float]]
    checkpoint: Optional[str] = None


@dataclass
class TrainRunRecord:
    """Per-epoch losses, evaluation scores and checkpoints of one phase.

    ``baseline`` holds the scores before the first epoch.
    """
    phase: str
    epochs: List[EpochRecord] = field(default_factory=list)
    baseline: Dict[str, Dict[str, float]] = field(default_factory=dict)
    reported_epochs: Tuple[int, ...] = ()

    def scores_at(self, epoch):
        return self.baseline if epoch == 0 else self.epochs[epoch - 1].scores

    def char_bleu(self, eval_set, epoch):
        return self.scores_at(epoch)[eval_set]["char_bleu"]

    def to_dict(self):
        return asdict(self)

    def write(self, run_dir):
        """Write ``{phase}_record.json``, ``{phase}_loss.csv`` and ``{phase}_eval.csv``."""
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, self.phase + "_record.json"), "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        with open(os.path.join(run_dir, self.phase + "_loss.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "split", "loss"])
            for record in self.epochs:
                writer.writerow([record.epoch, "train", repr(record.train_loss)])
        with open(os.path.join(run_dir, self.phase + "_eval.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "eval_set", "bleu", "char_bleu", "chrf"])
            for epoch in range(len(self.epochs) + 1):
                for name, report in self.scores_at(epoch).items():
                    writer.writerow([epoch, name, report["bleu"], report["char_bleu"], report["chrf"]])


class ScheduleResult(NamedTuple):
    phase1: TrainRunRecord
    phase2: TrainRunRecord
    state: object


def encode_pairs(vocab, pairs, direction, max_len=128):
    """Encode the input and output sides of pairs as (src_ids, tgt_ids) arrays."""
    direction = Direction(direction)
    inputs, outputs = zip(*(direction.sides(p) for p in pairs)) if pairs else ((), ())
    src_ids, _ = encode_batch(vocab, inputs, direction.source_lang, max_len)
    tgt_ids, _ = encode_batch(vocab, outputs, direction.target_lang, max_len)
    return src_ids, tgt_ids


def accumulate_gradients(state, micro_batches, train=True):
    """
    Token-weighted gradient of several micro-batches.

    INPUTS
    =======
    state: ModelState.
    micro_batches: iterable of (src_ids, tgt_ids) arrays.
    train (optional, default True): dropout on.

    RETURNS
    ========
    (loss_sum, token_count, grads): summed loss, non-PAD target tokens, and the
    gradient of ``loss_sum / token_count`` per trainable parameter (float64),
    the same as one forward pass over the concatenated batch.
    """
    loss_sum, tokens, total = 0.0, 0, {}
    for src_ids, tgt_ids in micro_batches:
        batch_loss, batch_tokens, grads = compute_gradients(state, trim_batch(src_ids), trim_batch(tgt_ids), train)
        loss_sum += batch_loss
        tokens += batch_tokens
        for name, grad in grads.items():
            if name in total:
                total[name] += grad
            else:
                total[name] = grad.astype(np.float64)
    scale = 1.0 / tokens if tokens else 0.0
    return loss_sum, tokens, {name: grad * scale for name, grad in total.items()}


def steps_per_epoch(sample_count, batch_size, grad_accum_steps):
    return math.ceil(math.ceil(sample_count / batch_size) / grad_accum_steps)


def train_epoch(state, src_ids, tgt_ids, optimizer, schedule, batch_size, grad_accum_steps, rng,
                progress=False, desc="train"):
    """
    One shuffled pass over the data; returns the mean token loss of the epoch.

    ``schedule`` maps the 1-based optimizer step to a learning rate.
    """
    order = rng.permutation(len(src_ids))
    micro = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    loss_sum, tokens = 0.0, 0
    for i in tqdm(range(0, len(micro), grad_accum_steps), desc=desc, disable=not progress, leave=False):
        group = [(src_ids[index], tgt_ids[index]) for index in micro[i:i + grad_accum_steps]]
        batch_loss, batch_tokens, grads = accumulate_gradients(state, group)
        lr = schedule(state.step + 1)
        adamw.step(state, grads, optimizer, lr)
        logger.debug("step %d lr %.3g loss %.4f", state.step, lr, batch_loss / max(batch_tokens, 1))
        loss_sum += batch_loss
        tokens += batch_tokens
    return loss_sum / max(tokens, 1)


def evaluate_model(state, vocab, pairs, direction, batch_size=64, max_len=None):
    """Greedy-decode the input side of ``pairs`` and score against the output side."""
    direction = Direction(direction)
    max_len = max_len or state.config.max_len
    inputs = [direction.sides(p)[0] for p in pairs]
    refs = [direction.sides(p)[1] for p in pairs]
    hyps = []
    for start in range(0, len(inputs), batch_size):
        ids, _ = encode_batch(vocab, inputs[start:start + batch_size], direction.source_lang, max_len)
        hyps.extend(greedy_batch(state, vocab, trim_batch(ids), direction.target_lang, max_len))
    return evaluate(hyps, refs)


def _scores(state, vocab, eval_sets, config):
    return {name: evaluate_model(state, vocab, pairs, config.direction, config.eval_batch_size,
                                 config.max_len).to_dict()
            for name, pairs in eval_sets.items()}


def train_phase(state, vocab, pairs, config, phase, eval_sets=None, run_dir=None, epochs=None,
                progress=False):
    """
    Teacher-forced training of every parameter for one phase.

    INPUTS
    =======
    state: ModelState with nothing frozen; updated in place.
    vocab: the model's Vocabulary.
    pairs: list of SentencePair.
    config: FinetuneConfig.
    phase: Phase, selects the default epoch count and the reported epochs.
    eval_sets (optional): dictionary of name to SentencePairs scored before
                          training and after every epoch.
    run_dir (optional): directory for per-epoch checkpoints and the run files.
    epochs (optional): overrides the phase's epoch count.

    RETURNS
    ========
    (state, TrainRunRecord)
    """
    config.validate()
    phase = Phase(phase)
    if epochs is None:
        epochs = config.phase1_epochs if phase is Phase.PHASE1 else config.phase2_epochs
    frozen = state.frozen_names()
    if frozen:
        raise FreezePolicyError("Fine-tuning trains every parameter, but {} tensors are frozen (e.g. {}).".format(
            len(frozen), frozen[0]))
    if epochs and not pairs:
        raise EmptyCorpusError("No training pairs for {}.".format(phase.value))
    eval_sets = eval_sets or {}
    reported = (config.phase1_checkpoint_epoch,) if phase is Phase.PHASE1 else tuple(config.phase2_eval_epochs)

    adamw.reset(state)
    optimizer = adamw.AdamWConfig(lr=config.learning_rate, weight_decay=config.weight_decay)
    total = epochs * steps_per_epoch(len(pairs), config.batch_size, config.grad_accum_steps)

    def schedule(s):
        return adamw.learning_rate(s, total, config.learning_rate, config.warmup_ratio)

    record = TrainRunRecord(phase.value, [], _scores(state, vocab, eval_sets, config), reported)
    if epochs:
        src_ids, tgt_ids = encode_pairs(vocab, pairs, config.direction, config.max_len)
    for epoch in range(1, epochs + 1):
        rng = np.random.default_rng([config.seed, 1 if phase is Phase.PHASE1 else 2, epoch])
        train_loss = train_epoch(state, src_ids, tgt_ids, optimizer, schedule, config.batch_size,
                                 config.grad_accum_steps, rng, progress,
                                 desc="{} epoch {}".format(phase.value, epoch))
        scores = _scores(state, vocab, eval_sets, config)
        path = None
        if run_dir is not None:
            path = checkpoint.save(state, os.path.join(run_dir, "{}_epoch{}.ckpt".format(phase.value, epoch)),
                                   phase.value, epoch, {"direction": config.direction.value})
        record.epochs.append(EpochRecord(epoch, train_loss, scores, path))
        logger.info("%s epoch %d: loss %.4f %s", phase.value, epoch, train_loss,
                    " ".join("{} char-bleu {:.2f}".format(name, s["char_bleu"]) for name, s in scores.items()))
    if run_dir is not None:
        record.write(run_dir)
    return state, record


def run_schedule(config, state, vocab, phase1_data, phase2_data, eval_sets=None, run_dir=None,
                 progress=False):
    """
    Phase 1 on ``phase1_data``, then phase 2 on ``phase2_data`` starting from the
    phase-1 checkpoint of epoch ``config.phase1_checkpoint_epoch``.

    Without ``run_dir`` the checkpoints live in a temporary directory and the
    records carry no checkpoint paths.

    RETURNS
    ========
    ScheduleResult(phase1, phase2, state)
    """
    config.validate()
    with tempfile.TemporaryDirectory() as scratch:
        directory = run_dir or scratch
        state, phase1 = train_phase(state, vocab, phase1_data, config, Phase.PHASE1, eval_sets, directory,
                                    progress=progress)
        path = os.path.join(directory, "phase1_epoch{}.ckpt".format(config.phase1_checkpoint_epoch))
        if not os.path.exists(path):
            raise checkpoint.CheckpointError("Phase-1 checkpoint {} is missing.".format(path))
        state = checkpoint.load(path).state
        logger.info("Phase 2 starts from %s", path)
        state, phase2 = train_phase(state, vocab, phase2_data, config, Phase.PHASE2, eval_sets, directory,
                                    progress=progress)
    if run_dir is None:
        for record in phase1.epochs + phase2.epochs:
            record.checkpoint = None
    return ScheduleResult(phase1, phase2, state)
