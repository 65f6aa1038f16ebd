"""
Encoder-decoder transformer built on tensorgrad.

Pre-layer-norm residual blocks, sinusoidal positions, a token embedding shared
by encoder and decoder, and an output projection kept separate from the
embedding. Parameters are plain numpy arrays in :class:`ModelState`, keyed by
dotted names; the freeze mask is keyed the same way.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict

import numpy as np
from tensorgrad.autodiff import Constant, Gather, TakeAlongLast, Var
from tensorgrad.math import LayerNorm, LogSoftmax, Relu, Softmax

from .errors import TranslitError
from .tokenizer import EncodedSequence, decode

logger = logging.getLogger(__name__)

NEG_INF = -1e9
POSITIONS = "shared.embed_positions"
MLM_FROZEN_PREFIXES = ("shared.", "encoder.layers.0.", "encoder.layers.1.",
                       "decoder.layers.0.", "decoder.layers.1.")


class ModelConfigError(TranslitError):
    """Invalid model dimensions or inputs that do not fit the model."""


class FreezePolicyError(TranslitError):
    """A freeze policy cannot be applied, or training found it in the wrong state."""


class FreezePolicy(Enum):
    NONE = "none"
    MLM = "mlm_policy"


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    enc_layers: int = 3
    dec_layers: int = 3
    ffn_dim: int = 256
    max_len: int = 128
    dropout_rate: float = 0.1
    seed: int = 0
    dtype: str = "float32"

    def validate(self):
        if self.vocab_size < 1:
            raise ModelConfigError("vocab_size must be positive, got {}.".format(self.vocab_size))
        for name in ("d_model", "n_heads", "ffn_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ModelConfigError("{} must be positive, got {}.".format(name, getattr(self, name)))
        if self.d_model % self.n_heads:
            raise ModelConfigError("d_model {} is not divisible by n_heads {}.".format(
                self.d_model, self.n_heads))
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ModelConfigError("The model needs at least one encoder and one decoder layer.")
        if not 0 <= self.dropout_rate < 1:
            raise ModelConfigError("dropout_rate must be in [0, 1), got {}.".format(self.dropout_rate))
        if self.dtype not in ("float32", "float64"):
            raise ModelConfigError("dtype must be float32 or float64, got {}.".format(self.dtype))


@dataclass
class ModelState:
    """Parameters, buffers, freeze mask, optimizer moments and the dropout generator."""
    config: ModelConfig
    params: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]
    frozen: Dict[str, bool]
    rng: np.random.Generator
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)

    def parameter_count(self):
        return sum(p.size for p in self.params.values())

    def frozen_names(self):
        return sorted(name for name, frozen in self.frozen.items() if frozen)

    def trainable_names(self):
        return [name for name in self.params if not self.frozen[name]]


def _attention_shapes(prefix, d):
    shapes = {}
    for proj in ("q_proj", "k_proj", "v_proj", "out_proj"):
        shapes["{}.{}.weight".format(prefix, proj)] = (d, d)
        shapes["{}.{}.bias".format(prefix, proj)] = (d,)
    return shapes


def _norm_shapes(prefix, d):
    return {prefix + ".weight": (d,), prefix + ".bias": (d,)}


def parameter_shapes(config):
    """Ordered mapping of every learned parameter name to its shape."""
    d, f = config.d_model, config.ffn_dim
    shapes = {"shared.embed_tokens": (config.vocab_size, d)}
    for stack, n_layers in (("encoder", config.enc_layers), ("decoder", config.dec_layers)):
        for i in range(n_layers):
            prefix = "{}.layers.{}".format(stack, i)
            shapes.update(_norm_shapes(prefix + ".self_attn_layer_norm", d))
            shapes.update(_attention_shapes(prefix + ".self_attn", d))
            if stack == "decoder":
                shapes.update(_norm_shapes(prefix + ".encoder_attn_layer_norm", d))
                shapes.update(_attention_shapes(prefix + ".encoder_attn", d))
            shapes.update(_norm_shapes(prefix + ".final_layer_norm", d))
            shapes.update({prefix + ".fc1.weight": (d, f), prefix + ".fc1.bias": (f,),
                           prefix + ".fc2.weight": (f, d), prefix + ".fc2.bias": (d,)})
        shapes.update(_norm_shapes(stack + ".layer_norm", d))
    shapes["decoder.output_projection.weight"] = (d, config.vocab_size)
    shapes["decoder.output_projection.bias"] = (config.vocab_size,)
    return shapes


def sinusoidal_positions(max_len, d_model):
    """Fixed sine/cosine position table of shape (max_len, d_model)."""
    position = np.arange(max_len)[:, None]
    div_term = np.exp(np.arange(0, d_model, 2) * -(math.log(10000.0) / d_model))
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(position * div_term)
    table[:, 1::2] = np.cos(position * div_term)[:, :d_model // 2]
    return table


def init(config):
    """
    Seeded initialization: Xavier-uniform matrices, N(0, d^-1/2) embeddings,
    unit layer-norm scales and zero biases. Nothing is frozen.
    """
    config.validate()
    dtype = np.dtype(config.dtype)
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name == "shared.embed_tokens":
            value = rng.normal(0.0, config.d_model ** -0.5, size=shape)
        elif name.endswith(".weight") and len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".weight"):
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = value.astype(dtype)
    buffers = {POSITIONS: sinusoidal_positions(config.max_len, config.d_model).astype(dtype)}
    frozen = {name: False for name in list(params) + list(buffers)}
    return ModelState(config, params, buffers, frozen, np.random.default_rng([config.seed, 2]))


def set_freeze(state, policy):
    """
    Apply a freeze policy to the state's freeze mask.

    INPUTS
    =======
    state: ModelState, modified in place and returned.
    policy: FreezePolicy.NONE clears the mask; FreezePolicy.MLM freezes the
    shared embeddings, the positional table and layers 0-1 of both stacks.
    """
    policy = FreezePolicy(policy)
    if policy is FreezePolicy.MLM:
        if state.config.enc_layers < 2 or state.config.dec_layers < 2:
            raise FreezePolicyError("mlm_policy needs at least 2 encoder and 2 decoder layers, got {}+{}.".format(
                state.config.enc_layers, state.config.dec_layers))
        for name in state.frozen:
            state.frozen[name] = name.startswith(MLM_FROZEN_PREFIXES)
    else:
        for name in state.frozen:
            state.frozen[name] = False
    logger.debug("Freeze policy %s: %d tensors frozen", policy.value, len(state.frozen_names()))
    return state


# Graph construction -------------------------------------------------------

def _as_batch(ids):
    if isinstance(ids, EncodedSequence):
        ids = ids.ids
    ids = np.asarray(ids, dtype=np.int64)
    return ids[None, :] if ids.ndim == 1 else ids


def _linear(w, x, name):
    return x @ w[name + ".weight"] + w[name + ".bias"]


def _norm(w, x, name):
    return LayerNorm(x, w[name + ".weight"], w[name + ".bias"])


class _Graph:
    """One forward pass: parameter leaves plus dropout drawn from the state's generator."""

    def __init__(self, state, train, with_grad):
        self.config = state.config
        self.dtype = np.dtype(state.config.dtype)
        self.train = train and state.config.dropout_rate > 0
        self.rng = state.rng
        self.w = {name: Var(value, requires_grad=with_grad and not state.frozen[name])
                  for name, value in state.params.items()}
        self.positions = state.buffers[POSITIONS]

    def dropout(self, x):
        if not self.train:
            return x
        keep = self.rng.random(x.shape) >= self.config.dropout_rate
        return x * Constant((keep / (1.0 - self.config.dropout_rate)).astype(self.dtype))

    def embed(self, ids):
        if ids.shape[1] > self.config.max_len:
            raise ModelConfigError("Sequence length {} exceeds max_len {}.".format(
                ids.shape[1], self.config.max_len))
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ModelConfigError("Token ids must be in [0, {}).".format(self.config.vocab_size))
        x = Gather(self.w["shared.embed_tokens"], ids) * math.sqrt(self.config.d_model)
        return self.dropout(x + Constant(self.positions[:ids.shape[1]]))

    def attention(self, name, x_q, x_kv, bias):
        batch, q_len, d = x_q.shape
        k_len = x_kv.shape[1]
        heads = self.config.n_heads
        head_dim = d // heads

        def split(x, length):
            return x.reshape(batch, length, heads, head_dim).transpose(0, 2, 1, 3)

        q = split(_linear(self.w, x_q, name + ".q_proj"), q_len)
        k = split(_linear(self.w, x_kv, name + ".k_proj"), k_len)
        v = split(_linear(self.w, x_kv, name + ".v_proj"), k_len)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(head_dim)) + Constant(bias)
        context = (Softmax(scores) @ v).transpose(0, 2, 1, 3).reshape(batch, q_len, d)
        return _linear(self.w, context, name + ".out_proj")

    def feed_forward(self, prefix, x):
        hidden = self.dropout(Relu(_linear(self.w, x, prefix + ".fc1")))
        return _linear(self.w, hidden, prefix + ".fc2")

    def encode(self, src_ids):
        src_bias = np.where(src_ids == 0, NEG_INF, 0.0).astype(self.dtype)[:, None, None, :]
        x = self.embed(src_ids)
        for i in range(self.config.enc_layers):
            prefix = "encoder.layers.{}".format(i)
            h = _norm(self.w, x, prefix + ".self_attn_layer_norm")
            x = x + self.dropout(self.attention(prefix + ".self_attn", h, h, src_bias))
            h = _norm(self.w, x, prefix + ".final_layer_norm")
            x = x + self.dropout(self.feed_forward(prefix, h))
        return _norm(self.w, x, "encoder.layer_norm"), src_bias

    def decode(self, memory, src_bias, tgt_ids):
        length = tgt_ids.shape[1]
        causal = np.triu(np.full((length, length), NEG_INF), k=1).astype(self.dtype)[None, None]
        x = self.embed(tgt_ids)
        for i in range(self.config.dec_layers):
            prefix = "decoder.layers.{}".format(i)
            h = _norm(self.w, x, prefix + ".self_attn_layer_norm")
            x = x + self.dropout(self.attention(prefix + ".self_attn", h, h, causal))
            h = _norm(self.w, x, prefix + ".encoder_attn_layer_norm")
            x = x + self.dropout(self.attention(prefix + ".encoder_attn", h, memory, src_bias))
            h = _norm(self.w, x, prefix + ".final_layer_norm")
            x = x + self.dropout(self.feed_forward(prefix, h))
        x = _norm(self.w, x, "decoder.layer_norm")
        return _linear(self.w, x, "decoder.output_projection")

    def logits(self, src_ids, tgt_ids):
        memory, src_bias = self.encode(src_ids)
        return self.decode(memory, src_bias, tgt_ids)


def shifted_labels(tgt_ids, pad_id=0):
    """Next-token labels: position t is scored against tgt[t + 1]; the last position is PAD."""
    tgt_ids = _as_batch(tgt_ids)
    return np.concatenate([tgt_ids[:, 1:], np.full((tgt_ids.shape[0], 1), pad_id, dtype=np.int64)], axis=1)


def forward(state, src, tgt, train=False):
    """
    Teacher-forced logits.

    INPUTS
    =======
    state: ModelState.
    src, tgt: token ids, one sequence (1-D / EncodedSequence) or a batch (2-D).
    train (optional, default False): apply dropout, drawing from ``state.rng``.

    RETURNS
    ========
    logits of shape (T, V) for one sequence or (B, T, V) for a batch; the
    logits at position t predict target token t + 1.
    """
    single = np.ndim(src.ids if isinstance(src, EncodedSequence) else src) == 1
    src_ids, tgt_ids = _as_batch(src), _as_batch(tgt)
    if src_ids.shape[0] != tgt_ids.shape[0]:
        raise ModelConfigError("Source batch {} and target batch {} differ in size.".format(
            src_ids.shape[0], tgt_ids.shape[0]))
    logits = _Graph(state, train, with_grad=False).logits(src_ids, tgt_ids).value
    return logits[0] if single else logits


def loss(logits, tgt, pad_id=0):
    """
    Mean next-token cross-entropy over non-PAD labels, accumulated in float64.

    RETURNS
    ========
    (mean_loss, token_count)
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 2:
        logits = logits[None]
    labels = shifted_labels(tgt, pad_id)
    if labels.shape != logits.shape[:2]:
        raise ModelConfigError("Logits {} do not match targets {}.".format(logits.shape, labels.shape))
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(log_probs, labels[..., None], axis=-1)[..., 0]
    mask = labels != pad_id
    count = int(mask.sum())
    if count == 0:
        return 0.0, 0
    return float(-(picked * mask).sum() / count), count


def compute_gradients(state, src_ids, tgt_ids, train=True, pad_id=0):
    """
    Summed token cross-entropy and its gradients for one batch.

    RETURNS
    ========
    (loss_sum, token_count, grads) where ``grads`` maps every trainable
    parameter name to the gradient of ``loss_sum``.
    """
    src_ids, tgt_ids = _as_batch(src_ids), _as_batch(tgt_ids)
    graph = _Graph(state, train, with_grad=True)
    labels = shifted_labels(tgt_ids, pad_id)
    mask = (labels != pad_id).astype(np.float64)
    log_probs = LogSoftmax(graph.logits(src_ids, tgt_ids))
    total = -(TakeAlongLast(log_probs, labels) * mask).sum()
    names = state.trainable_names()
    grads = dict(zip(names, total.grad([graph.w[name] for name in names]))) if names else {}
    return float(total.value), int(mask.sum()), grads


# Decoding ---------------------------------------------------------------

def _strip(vocab, ids):
    out = []
    for token_id in ids[1:]:
        if token_id == vocab.eos_id:
            break
        out.append(token_id)
    return decode(vocab, out)


def greedy_batch(state, vocab, src_ids, target_lang, max_len=None):
    """
    Greedy decoding of a batch of encoded sources.

    Each output starts from the target language token and appends the argmax
    token (lowest id on ties) until EOS or ``max_len`` tokens.

    RETURNS
    ========
    list of decoded texts, one per source row.
    """
    max_len = max_len or state.config.max_len
    src_ids = _as_batch(src_ids)
    graph = _Graph(state, train=False, with_grad=False)
    memory, src_bias = graph.encode(src_ids)
    out = np.full((src_ids.shape[0], 1), vocab.lang_id(target_lang), dtype=np.int64)
    done = np.zeros(src_ids.shape[0], dtype=bool)
    while out.shape[1] < max_len and not done.all():
        logits = graph.decode(memory, src_bias, out).value[:, -1]
        next_ids = np.where(done, vocab.pad_id, np.argmax(logits, axis=-1))
        out = np.concatenate([out, next_ids[:, None]], axis=1)
        done |= next_ids == vocab.eos_id
    return [_strip(vocab, row) for row in out.tolist()]


def decode_greedy(state, vocab, src, target_lang, max_len=None):
    """Greedy decoding of one source sequence."""
    return greedy_batch(state, vocab, _as_batch(src), target_lang, max_len)[0]


def beam_search(state, vocab, src, target_lang, width=4, max_len=None, length_penalty=1.0):
    """
    Beam decoding of one source sequence.

    Hypotheses are ranked by summed log-probability divided by
    ``length ** length_penalty``; ties keep the lower token id.
    """
    max_len = max_len or state.config.max_len
    src_ids = _as_batch(src)
    graph = _Graph(state, train=False, with_grad=False)
    memory, src_bias = graph.encode(src_ids)
    beams = [([vocab.lang_id(target_lang)], 0.0)]
    finished = []
    while beams and len(finished) < width:
        length = len(beams[0][0])
        if length >= max_len:
            finished.extend(beams)
            break
        prefixes = np.array([ids for ids, _ in beams], dtype=np.int64)
        rows = np.zeros(len(beams), dtype=np.int64)
        logits = graph.decode(Constant(memory.value[rows]), src_bias[rows], prefixes).value[:, -1]
        log_probs = LogSoftmax(logits).value
        candidates = []
        for (ids, score), row in zip(beams, log_probs):
            for token_id in np.argsort(-row, kind="stable")[:width]:
                candidates.append((ids + [int(token_id)], score + float(row[token_id])))
        candidates.sort(key=lambda c: -c[1])
        beams = []
        for ids, score in candidates[:width]:
            (finished if ids[-1] == vocab.eos_id else beams).append((ids, score))

    def rank(hypothesis):
        ids, score = hypothesis
        return score / max(len(ids) - 1, 1) ** length_penalty

    best = max(finished, key=rank)
    return _strip(vocab, best[0])
