"""Ingest, normalize and group parallel transliteration data.

The unit the rest of the toolkit reasons about is the :class:`ParallelGroup`:
one Urdu-script sentence together with every Roman-Urdu spelling of it found
in the corpus. This module also generates synthetic corpora with a controlled
variant structure and an exact rule-based inverse, for tests and toy runs.
"""
import hashlib
import json
import logging
import math
import os
import unicodedata
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Tuple

import numpy as np

from .errors import TranslitError

logger = logging.getLogger(__name__)


class CorpusError(TranslitError):
    """A corpus file cannot be read or a sentence pair is invalid."""


class EmptyCorpusError(CorpusError):
    """A corpus file yielded no valid sentence pair."""


class SynthConfigError(CorpusError):
    """A synthetic corpus configuration is invalid."""


class Origin(Enum):
    """ Enum of the corpora a sentence pair may come from."""
    RUP = "rup"
    DAKSHINA = "dakshina"
    SYNTHETIC = "synthetic"
    OTHER = "other"


@dataclass(frozen=True)
class SentencePair:
    """One Urdu-script sentence (``source``) and one Roman-Urdu rendering (``target``)."""
    source: str
    target: str
    origin: Origin = Origin.OTHER
    line_no: int = 1

    def __post_init__(self):
        for name in ("source", "target"):
            text = getattr(self, name)
            if not text:
                raise CorpusError("Sentence pair {} is empty (line {}).".format(name, self.line_no))
            if "\t" in text or "\n" in text:
                raise CorpusError("Sentence pair {} contains a tab or newline (line {}).".format(
                    name, self.line_no))
        if self.line_no < 1:
            raise CorpusError("Line numbers start at 1, got {}.".format(self.line_no))


@dataclass(frozen=True)
class ParallelGroup:
    """A source sentence and all of its distinct target-side variants, in first-seen order."""
    source: str
    variants: Tuple[str, ...]
    origin: Origin = Origin.OTHER

    @property
    def variant_count(self):
        return len(self.variants)


class RowError(NamedTuple):
    line_no: int
    message: str
    raw: str


class Ingested(NamedTuple):
    """Result of :func:`ingest`: the valid pairs and the malformed-row report."""
    pairs: List[SentencePair]
    errors: List[RowError]


def normalize(raw):
    """Canonicalize one line of text.

    Control characters are removed, whitespace runs collapse to one space,
    the ends are stripped and the result is NFC-composed.

    >>> normalize("  kya   haal ")
    'kya haal'
    >>> normalize("a\\u0000b")
    'ab'
    """
    kept = "".join(ch for ch in raw
                   if ch.isspace() or unicodedata.category(ch) != "Cc")
    return unicodedata.normalize("NFC", " ".join(kept.split()))


def _format_of(path, format):
    if format is None:
        format = os.path.splitext(str(path))[1].lstrip(".").lower()
    if format not in ("tsv", "jsonl"):
        raise CorpusError("Unsupported corpus format '{}' (expected tsv or jsonl).".format(format))
    return format


def _parse_tsv_row(line):
    fields = line.split("\t")
    if len(fields) != 2:
        raise ValueError("expected 2 tab-separated fields, found {}".format(len(fields)))
    return fields[0], fields[1], None


def _parse_jsonl_row(line):
    try:
        row = json.loads(line)
    except json.JSONDecodeError as e:
        raise ValueError("invalid JSON ({})".format(e.msg))
    if not isinstance(row, dict):
        raise ValueError("expected a JSON object")
    for field in ("source", "target"):
        if not isinstance(row.get(field), str):
            raise ValueError("missing field '{}'".format(field))
    origin = row.get("origin")
    if origin is not None:
        try:
            origin = Origin(origin)
        except ValueError:
            raise ValueError("unknown origin '{}'".format(origin))
    return row["source"], row["target"], origin


def ingest(path, format=None, origin=Origin.OTHER):
    """
    Read a parallel corpus file into normalized sentence pairs.

    INPUTS
    =======
    path: a TSV (``source<TAB>target``) or JSONL (``{"source", "target", "origin"?}``) file.
    format (optional): "tsv" or "jsonl"; inferred from the file suffix when omitted.
    origin (optional, default Origin.OTHER): origin tag for rows that do not carry one.

    RETURNS
    ========
    Ingested(pairs, errors): the valid pairs, and one RowError per malformed row
    (wrong field count, missing field, blank line, empty after normalization).
    """
    format = _format_of(path, format)
    parse = _parse_tsv_row if format == "tsv" else _parse_jsonl_row
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            text = f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusError("Cannot read corpus file {}: {}".format(path, e)) from e

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pairs, errors = [], []
    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\r")
        try:
            if not line.strip():
                raise ValueError("blank line")
            source, target, row_origin = parse(line)
            source, target = normalize(source), normalize(target)
            if not source or not target:
                raise ValueError("empty {} after normalization".format("source" if not source else "target"))
        except ValueError as e:
            errors.append(RowError(line_no, str(e), line))
            continue
        pairs.append(SentencePair(source, target, row_origin or origin, line_no))

    for error in errors:
        logger.warning("%s:%d: malformed row: %s", path, error.line_no, error.message)
    if not pairs:
        raise EmptyCorpusError("No valid sentence pairs in {} ({} malformed rows).".format(path, len(errors)))
    logger.info("Ingested %d pairs from %s (%d malformed rows)", len(pairs), path, len(errors))
    return Ingested(pairs, errors)


def emit(pairs, path, format=None):
    """Write sentence pairs as TSV or JSONL (JSONL keeps the origin)."""
    format = _format_of(path, format)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for pair in pairs:
            if format == "tsv":
                f.write("{}\t{}\n".format(pair.source, pair.target))
            else:
                f.write(json.dumps({"source": pair.source, "target": pair.target,
                                    "origin": pair.origin.value}, ensure_ascii=False) + "\n")


def group_by_source(pairs):
    """
    Group sentence pairs by their (normalized) source text.

    Duplicate (source, target) pairs collapse into one variant. Groups and
    variants keep first-seen order.
    """
    variants, origins = {}, {}
    for pair in pairs:
        seen = variants.setdefault(pair.source, {})
        seen.setdefault(pair.target, None)
        origins.setdefault(pair.source, pair.origin)
    return [ParallelGroup(source, tuple(targets), origins[source])
            for source, targets in variants.items()]


# Synthetic corpora -------------------------------------------------------

# canonical romanization shared by both synthetic domains
_FIXED_CODES = {
    "ا": "a", "ب": "b", "پ": "p", "ت": "t", "د": "d", "ر": "r", "س": "s", "گ": "g",
    "ل": "l", "م": "m", "ن": "n", "ہ": "h", "ج": "j", "ف": "f", "ز": "z",
}

# one-to-many spelling rules per domain; the first spelling is canonical.
# Within a domain all spellings form a prefix-free code, so the inverse is exact.
VARIATION_RULES = {
    "a": (("ی", ("i", "ee", "y")), ("و", ("o", "u")), ("ک", ("k", "c"))),
    "b": (("ی", ("e", "ie")), ("و", ("w", "v")), ("ک", ("q", "kh"))),
}


@dataclass
class SynthConfig:
    """Parameters of :func:`generate_synthetic`."""
    group_count: int
    max_variants: int = 10
    seed: int = 0
    sentence_len_range: Tuple[int, int] = (3, 6)
    variant_rule_count: int = 3
    domain: str = "a"
    for_full_split: bool = False

    def validate(self):
        if self.group_count < 1:
            raise SynthConfigError("group_count must be positive, got {}.".format(self.group_count))
        if not 1 <= self.max_variants <= 10:
            raise SynthConfigError("max_variants must be in [1, 10], got {}.".format(self.max_variants))
        if self.domain not in VARIATION_RULES:
            raise SynthConfigError("Unknown synthetic domain '{}'.".format(self.domain))
        if not 0 <= self.variant_rule_count <= len(VARIATION_RULES[self.domain]):
            raise SynthConfigError("variant_rule_count must be in [0, {}], got {}.".format(
                len(VARIATION_RULES[self.domain]), self.variant_rule_count))
        if self.max_variants > 1 and self.variant_rule_count == 0:
            raise SynthConfigError("max_variants > 1 needs at least one variation rule.")
        low, high = self.sentence_len_range
        if not 1 <= low <= high:
            raise SynthConfigError("Invalid sentence_len_range {}.".format(self.sentence_len_range))
        if self.for_full_split and self.group_count < 6000:
            raise SynthConfigError(
                "The full split sizes need at least 6000 groups, got {}.".format(self.group_count))


def code_table(domain, rule_count=None):
    """Spellings allowed for each source letter under the first ``rule_count`` rules."""
    rules = VARIATION_RULES[domain]
    if rule_count is None:
        rule_count = len(rules)
    table = {letter: (code,) for letter, code in _FIXED_CODES.items()}
    for i, (letter, spellings) in enumerate(rules):
        table[letter] = spellings if i < rule_count else spellings[:1]
    return table


def _random_sentence(rng, letters, weights, config):
    low, high = config.sentence_len_range
    words = []
    for _ in range(rng.integers(low, high + 1)):
        length = rng.integers(2, 7)
        words.append("".join(letters[i] for i in rng.choice(len(letters), size=length, p=weights)))
    return " ".join(words)


def _variant_space(source, table):
    return math.prod(len(table.get(ch, (ch,))) for ch in source)


def _spell(source, table, choose):
    return "".join(ch if ch == " " else table[ch][choose(len(table[ch]))] for ch in source)


def generate_synthetic(config):
    """
    Generate a synthetic parallel corpus with a known variant structure.

    INPUTS
    =======
    config: a SynthConfig.

    RETURNS
    ========
    pairs: SentencePairs (origin synthetic), grouped by source in order. Exactly
    ceil(45%) of the groups are singletons (all of them when max_variants is 1);
    the others get k variants with k uniform in 2..max_variants. The first
    variant of every group is the canonical spelling. The result depends only
    on the config.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    table = code_table(config.domain, config.variant_rule_count)
    variable = {letter for letter, _ in VARIATION_RULES[config.domain]}
    letters = sorted(table)
    weights = np.array([3.0 if letter in variable else 1.0 for letter in letters])
    weights /= weights.sum()

    if config.max_variants == 1:
        singletons = config.group_count
    else:
        singletons = math.ceil(0.45 * config.group_count)
    counts = np.concatenate([
        np.ones(singletons, dtype=np.int64),
        rng.integers(2, config.max_variants + 1, size=config.group_count - singletons)])
    counts = rng.permutation(counts)

    seen = set()
    pairs = []
    for k in counts:
        while True:
            source = _random_sentence(rng, letters, weights, config)
            if source not in seen and _variant_space(source, table) >= k:
                break
        seen.add(source)
        variants = {_spell(source, table, lambda n: 0): None}
        while len(variants) < k:
            variants.setdefault(_spell(source, table, lambda n: int(rng.integers(n))), None)
        for variant in variants:
            pairs.append(SentencePair(source, variant, Origin.SYNTHETIC, len(pairs) + 1))
    logger.debug("Generated %d synthetic pairs over %d groups", len(pairs), config.group_count)
    return pairs


def inverse_transliterate(roman, domain="a"):
    """Map a synthetic Roman-Urdu spelling back to its source sentence."""
    reverse = {}
    for letter, spellings in code_table(domain).items():
        for spelling in spellings:
            reverse[spelling] = letter
    longest = max(len(code) for code in reverse)
    out = []
    i = 0
    while i < len(roman):
        if roman[i] == " ":
            out.append(" ")
            i += 1
            continue
        for width in range(longest, 0, -1):
            letter = reverse.get(roman[i:i + width])
            if letter is not None:
                out.append(letter)
                i += width
                break
        else:
            raise CorpusError("Cannot invert '{}' at position {} under domain '{}'.".format(roman, i, domain))
    return "".join(out)


def file_digest(path):
    """SHA-256 hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def load_pairs(path, origin=Origin.OTHER):
    """Ingest a corpus file and return only its valid pairs."""
    return ingest(path, origin=origin).pairs


