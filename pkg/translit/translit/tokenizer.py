"""Character-level vocabulary with special and language-conditioning tokens."""
import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import TranslitError

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK, MASK = "<pad>", "<bos>", "<eos>", "<unk>", "<mask>"
SPECIALS = (PAD, BOS, EOS, UNK, MASK)
ROMAN_UR, UR = "__roman-ur__", "__ur__"
DEFAULT_LANGS = (ROMAN_UR, UR)
UNK_GLYPH = "�"


class VocabularyError(TranslitError):
    """Vocabulary construction, lookup or file error."""


class Vocabulary:
    """
    Dense symbol table: special tokens, then language tokens, then characters
    sorted by code point. ``PAD`` is always id 0.
    """

    def __init__(self, symbols, langs=DEFAULT_LANGS):
        symbols = list(symbols)
        if tuple(symbols[:len(SPECIALS)]) != SPECIALS:
            raise VocabularyError("A vocabulary must start with the special tokens {}.".format(SPECIALS))
        if tuple(symbols[len(SPECIALS):len(SPECIALS) + len(langs)]) != tuple(langs):
            raise VocabularyError("Language tokens {} must follow the special tokens.".format(tuple(langs)))
        if len(set(symbols)) != len(symbols):
            raise VocabularyError("Vocabulary symbols must be distinct.")
        for symbol in symbols[len(SPECIALS) + len(langs):]:
            if len(symbol) != 1:
                raise VocabularyError("Character entry {!r} is not a single character.".format(symbol))
        self.symbols = symbols
        self.langs = tuple(langs)
        self.index = {symbol: i for i, symbol in enumerate(symbols)}
        self.pad_id, self.bos_id, self.eos_id, self.unk_id, self.mask_id = range(len(SPECIALS))
        self.lang_ids = {lang: self.index[lang] for lang in self.langs}
        self.first_char_id = len(SPECIALS) + len(self.langs)

    @property
    def size(self):
        return len(self.symbols)

    def __len__(self):
        return len(self.symbols)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.symbols == other.symbols and self.langs == other.langs

    def lang_id(self, lang):
        try:
            return self.lang_ids[lang]
        except KeyError:
            raise VocabularyError("Unknown language tag '{}'.".format(lang)) from None

    def is_special(self, token_id):
        """True for PAD/BOS/EOS/UNK/MASK and language tokens."""
        return token_id < self.first_char_id

    def save(self, path):
        """One symbol per line; the line number is the id."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(self.symbols) + "\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8", newline="") as f:
                text = f.read()
        except (OSError, UnicodeDecodeError) as e:
            raise VocabularyError("Cannot read vocabulary file {}: {}".format(path, e)) from e
        if not text.endswith("\n"):
            raise VocabularyError("Vocabulary file {} is truncated.".format(path))
        symbols = text[:-1].split("\n")
        langs = []
        for symbol in symbols[len(SPECIALS):]:
            if not (symbol.startswith("__") and symbol.endswith("__") and len(symbol) > 4):
                break
            langs.append(symbol)
        return cls(symbols, langs)


@dataclass
class EncodedSequence:
    ids: List[int]
    attention_mask: List[int]
    lang: str


def build_vocab(pairs, langs=DEFAULT_LANGS):
    """
    Build the character vocabulary of a parallel corpus.

    INPUTS
    =======
    pairs: list of SentencePair (both sides contribute characters).
    langs (optional): language tags to register, in order.

    RETURNS
    ========
    Vocabulary: specials, languages, then every distinct character sorted by code point.
    """
    chars = set()
    for pair in pairs:
        chars.update(pair.source)
        chars.update(pair.target)
    if not chars:
        raise VocabularyError("Cannot build a vocabulary from an empty corpus.")
    vocab = Vocabulary(list(SPECIALS) + list(langs) + sorted(chars), langs)
    logger.info("Built vocabulary of %d symbols (%d characters)", vocab.size, len(chars))
    return vocab


def encode(vocab, text, lang, max_len=128):
    """Encode ``text`` as ``[LANG, chars..., EOS, PAD...]`` of exactly ``max_len`` ids.

    Characters beyond ``max_len - 2`` are truncated; unknown characters map to UNK.
    """
    if max_len < 2:
        raise VocabularyError("max_len must be at least 2, got {}.".format(max_len))
    lang_id = vocab.lang_id(lang)
    # single characters never collide with the multi-character special symbols
    chars = [vocab.index.get(ch, vocab.unk_id) for ch in text[:max_len - 2]]
    ids = [lang_id] + chars + [vocab.eos_id]
    mask = [1] * len(ids)
    padding = max_len - len(ids)
    return EncodedSequence(ids + [vocab.pad_id] * padding, mask + [0] * padding, lang)


def decode(vocab, ids):
    """Concatenate the character symbols of ``ids``; UNK renders as U+FFFD.

    PAD, BOS, EOS, MASK and language tokens are dropped.
    """
    out = []
    for token_id in ids:
        token_id = int(token_id)
        if not 0 <= token_id < vocab.size:
            raise VocabularyError("Token id {} is out of range for a vocabulary of {}.".format(
                token_id, vocab.size))
        if token_id == vocab.unk_id:
            out.append(UNK_GLYPH)
        elif token_id >= vocab.first_char_id:
            out.append(vocab.symbols[token_id])
    return "".join(out)


def encode_batch(vocab, texts, lang, max_len=128):
    """Encode many texts into ``(ids, mask)`` int64 arrays of shape (len(texts), max_len)."""
    encoded = [encode(vocab, text, lang, max_len) for text in texts]
    ids = np.array([e.ids for e in encoded], dtype=np.int64).reshape(len(encoded), max_len)
    mask = np.array([e.attention_mask for e in encoded], dtype=np.int64).reshape(len(encoded), max_len)
    return ids, mask


def trim_batch(ids, pad_id=0):
    """Drop trailing columns that are PAD in every row (keeps at least one column)."""
    ids = np.asarray(ids)
    used = np.flatnonzero((ids != pad_id).any(axis=0))
    width = used[-1] + 1 if used.size else 1
    return ids[:, :width]
