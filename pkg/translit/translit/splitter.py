"""Leakage-free train/validation/test splits over parallel groups.

A group is the unit of assignment: every variant of a source sentence lands
in the same subset. Validation and test each receive a fixed number of
single-variant groups and of multi-variant groups from the configured band;
everything else is training data. :func:`audit` re-checks a split
independently of how it was built.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .corpus import (CorpusError, Origin, ParallelGroup, SentencePair, emit,
                     file_digest, group_by_source, ingest)
from .errors import TranslitError

logger = logging.getLogger(__name__)

SUBSETS = ("train", "val_full", "test_full", "val_small", "test_small")
MANIFEST_NAME = "split.json"
FORMAT_VERSION = 1


class SplitError(TranslitError):
    """A split cannot be built from the given groups and configuration."""


class InsufficientGroupsError(SplitError):
    """The corpus has too few singleton or in-band groups for the configured sizes."""


class SplitManifestError(SplitError):
    """A split directory is incomplete or its files do not match the manifest."""


class Subset(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass
class SplitConfig:
    """Sizes of the evaluation sets, the variant band and the selection seed.

    ``small_eval_size`` defaults to ``unique + multi_groups`` of each eval set;
    when given explicitly it must agree with both.
    """
    unique_val: int = 1500
    unique_test: int = 1500
    multi_val_groups: int = 3000
    multi_test_groups: int = 3000
    multi_band: Tuple[int, int] = (2, 10)
    small_eval_size: Optional[int] = None
    seed: int = 0

    @property
    def val_small_size(self):
        return self.unique_val + self.multi_val_groups

    @property
    def test_small_size(self):
        return self.unique_test + self.multi_test_groups

    def validate(self):
        for name in ("unique_val", "unique_test", "multi_val_groups", "multi_test_groups"):
            if getattr(self, name) < 0:
                raise SplitError("{} must be non-negative, got {}.".format(name, getattr(self, name)))
        low, high = self.multi_band
        if low < 2 or high < low:
            raise SplitError("multi_band must satisfy 2 <= min <= max, got {}.".format(self.multi_band))
        if self.small_eval_size is not None and \
                self.small_eval_size not in {self.val_small_size} & {self.test_small_size}:
            raise SplitError(
                "small_eval_size {} must equal unique + multi groups of both eval sets ({} and {}).".format(
                    self.small_eval_size, self.val_small_size, self.test_small_size))
        if not 0 <= self.seed < 2 ** 64:
            raise SplitError("seed must be a 64-bit unsigned integer, got {}.".format(self.seed))


@dataclass
class CorpusSplit:
    train: List[SentencePair]
    val_full: List[SentencePair]
    test_full: List[SentencePair]
    val_small: List[SentencePair]
    test_small: List[SentencePair]
    provenance: Dict[str, Subset]
    val_groups: List[ParallelGroup] = field(default_factory=list)
    test_groups: List[ParallelGroup] = field(default_factory=list)

    def subset(self, name):
        return getattr(self, name)


def _flatten(groups):
    pairs = []
    for group in groups:
        for variant in group.variants:
            pairs.append(SentencePair(group.source, variant, group.origin, len(pairs) + 1))
    return pairs


def _take(pool, rng, first, second, kind):
    if len(pool) < first + second:
        raise InsufficientGroupsError("Need {} {} groups for validation and test, found {}.".format(
            first + second, kind, len(pool)))
    order = rng.permutation(len(pool))
    return sorted(order[:first].tolist()), sorted(order[first:first + second].tolist())


def build_split(groups, config):
    """
    Assign parallel groups to train, validation and test.

    INPUTS
    =======
    groups: list of ParallelGroup with distinct source texts.
    config: SplitConfig.

    RETURNS
    ========
    CorpusSplit: singletons are drawn before in-band groups and validation
    before test, with ``np.random.default_rng(config.seed)``. Groups outside
    the band (including more than the band's maximum) stay in train.
    """
    config.validate()
    seen = set()
    for group in groups:
        if group.source in seen:
            raise SplitError("Duplicate group key '{}'.".format(group.source))
        seen.add(group.source)

    low, high = config.multi_band
    singles = [g for g in groups if g.variant_count == 1]
    in_band = [g for g in groups if low <= g.variant_count <= high]
    rng = np.random.default_rng(config.seed)
    val_single, test_single = _take(singles, rng, config.unique_val, config.unique_test, "singleton")
    val_multi, test_multi = _take(in_band, rng, config.multi_val_groups, config.multi_test_groups,
                                  "in-band multi-variant")

    val_groups = [singles[i] for i in val_single] + [in_band[i] for i in val_multi]
    test_groups = [singles[i] for i in test_single] + [in_band[i] for i in test_multi]
    provenance = {g.source: Subset.TRAIN for g in groups}
    provenance.update((g.source, Subset.VAL) for g in val_groups)
    provenance.update((g.source, Subset.TEST) for g in test_groups)
    train = _flatten(g for g in groups if provenance[g.source] is Subset.TRAIN)

    val_small, test_small = build_small_eval(val_groups, test_groups, config)
    logger.info("Split %d groups: train %d pairs, val %d groups, test %d groups",
                len(groups), len(train), len(val_groups), len(test_groups))
    return CorpusSplit(train, _flatten(val_groups), _flatten(test_groups), val_small, test_small,
                       provenance, val_groups, test_groups)


def build_small_eval(val_groups, test_groups, config):
    """One pair per selected group; multi-variant groups get a seeded random variant.

    The generator is seeded with ``[config.seed, 1]`` so the small sets are
    independent of the group selection stream.
    """
    rng = np.random.default_rng([config.seed, 1])

    def pick(groups):
        small = []
        for group in groups:
            index = 0 if group.variant_count == 1 else int(rng.integers(group.variant_count))
            small.append(SentencePair(group.source, group.variants[index], group.origin, len(small) + 1))
        return small

    val_small = pick(val_groups)
    return val_small, pick(test_groups)


# Audit ------------------------------------------------------------------

class OverlapViolation(NamedTuple):
    source: str
    subsets: Tuple[str, ...]


class InclusionFailure(NamedTuple):
    source: str
    subset: str
    message: str


class RepetitionHit(NamedTuple):
    train_sentence: str
    eval_sentence: str
    relation: str


@dataclass
class AuditReport:
    overlap_violations: List[OverlapViolation]
    variation_inclusion_ok: bool
    inclusion_failures: List[InclusionFailure]
    unique_counts: Dict[str, int]
    multi_counts: Dict[str, int]
    small_counts: Dict[str, int]
    counts_ok: bool
    partial_repetition_hits: List[RepetitionHit]
    strict: bool
    passed: bool

    def to_dict(self):
        report = asdict(self)
        for key in ("overlap_violations", "inclusion_failures", "partial_repetition_hits"):
            report[key] = [item._asdict() for item in getattr(self, key)]
        return report


def _variants_by_source(pairs):
    return {g.source: g.variants for g in group_by_source(pairs)}


def _check_overlap(split):
    subsets = {
        "train": {p.source for p in split.train},
        "val": {p.source for p in split.val_full} | {p.source for p in split.val_small},
        "test": {p.source for p in split.test_full} | {p.source for p in split.test_small},
    }
    owners = {}
    for name, sources in subsets.items():
        for source in sources:
            owners.setdefault(source, []).append(name)
    return [OverlapViolation(source, tuple(names))
            for source, names in owners.items() if len(names) > 1]


def _check_inclusion(split, groups):
    failures = []
    train_sources = {p.source for p in split.train}
    reference = {g.source: g.variants for g in groups} if groups is not None else None
    for name, full, small in (("val", split.val_full, split.val_small),
                              ("test", split.test_full, split.test_small)):
        present = _variants_by_source(full)
        expected = present if reference is None else {s: reference.get(s, ()) for s in present}
        for source, variants in present.items():
            if set(variants) != set(expected[source]):
                failures.append(InclusionFailure(source, name, "{} of {} variants present".format(
                    len(set(variants) & set(expected[source])), len(expected[source]))))
            if source in train_sources:
                failures.append(InclusionFailure(source, name, "variant also present in train"))
        chosen = {}
        for pair in small:
            chosen[pair.source] = chosen.get(pair.source, 0) + 1
            if pair.target not in present.get(pair.source, ()):
                failures.append(InclusionFailure(pair.source, name + "_small",
                                                 "small-set pair is not a variant of its full-set group"))
        for source, count in chosen.items():
            if count != 1:
                failures.append(InclusionFailure(source, name + "_small",
                                                 "{} pairs for one group".format(count)))
        for source in present.keys() - chosen.keys():
            failures.append(InclusionFailure(source, name + "_small", "group missing from small set"))
    return failures


def _count(split, config):
    unique_counts, multi_counts = {}, {}
    for name, pairs in (("train", split.train), ("val", split.val_full), ("test", split.test_full)):
        variants = _variants_by_source(pairs)
        unique_counts[name] = sum(1 for v in variants.values() if len(v) == 1)
        multi_counts[name] = sum(1 for v in variants.values() if len(v) > 1)
    small_counts = {"val": len(split.val_small), "test": len(split.test_small)}
    counts_ok = (unique_counts["val"] == config.unique_val
                 and unique_counts["test"] == config.unique_test
                 and multi_counts["val"] == config.multi_val_groups
                 and multi_counts["test"] == config.multi_test_groups
                 and small_counts["val"] == config.val_small_size
                 and small_counts["test"] == config.test_small_size)
    return unique_counts, multi_counts, small_counts, counts_ok


def _spans(words):
    for i in range(len(words)):
        for j in range(i + 1, len(words) + 1):
            yield i, j, words[i:j]


def find_partial_repetitions(train_sources, eval_sources):
    """
    Find train sentences that repeat an evaluation sentence at whole-word boundaries.

    RETURNS
    ========
    list of RepetitionHit, with relation ``duplicate`` (same words),
    ``superstring`` (the train sentence contains the eval sentence) or
    ``substring`` (the train sentence is contained in the eval sentence).

    >>> find_partial_repetitions(["kya haal hai dost"], ["kya haal hai"])
    [RepetitionHit(train_sentence='kya haal hai dost', eval_sentence='kya haal hai', relation='superstring')]
    """
    whole = {}
    inner = {}
    for sentence in eval_sources:
        words = tuple(sentence.split())
        whole.setdefault(words, []).append(sentence)
        for i, j, span in _spans(words):
            if j - i < len(words):
                inner.setdefault(span, set()).add(sentence)

    hits = []
    for sentence in sorted(set(train_sources)):
        words = tuple(sentence.split())
        for i, j, span in _spans(words):
            for match in whole.get(span, ()):
                relation = "duplicate" if j - i == len(words) else "superstring"
                hits.append(RepetitionHit(sentence, match, relation))
        for match in sorted(inner.get(words, ())):
            hits.append(RepetitionHit(sentence, match, "substring"))
    return hits


def audit(split, config, strict=False, groups=None):
    """
    Run the four integrity checks on a split.

    INPUTS
    =======
    split: CorpusSplit to check.
    config: SplitConfig the counts are compared against.
    strict (optional, default False): make partial-repetition hits fail the audit.
    groups (optional): the original groups, to check eval groups are complete.

    RETURNS
    ========
    AuditReport; findings are reported, never raised.
    """
    overlap = _check_overlap(split)
    failures = _check_inclusion(split, groups)
    unique_counts, multi_counts, small_counts, counts_ok = _count(split, config)
    eval_sources = {p.source for p in split.val_full + split.test_full + split.val_small + split.test_small}
    hits = find_partial_repetitions({p.source for p in split.train}, eval_sources)
    passed = not overlap and not failures and counts_ok and not (strict and hits)

    for violation in overlap:
        logger.warning("Source '%s' appears in %s", violation.source, ", ".join(violation.subsets))
    logger.info("Audit %s: %d overlaps, %d inclusion failures, counts %s, %d partial repetitions",
                "passed" if passed else "FAILED", len(overlap), len(failures),
                "ok" if counts_ok else "mismatched", len(hits))
    return AuditReport(overlap, not failures, failures, unique_counts, multi_counts, small_counts,
                       counts_ok, hits, strict, passed)


# Manifest ---------------------------------------------------------------

def write_split(split, config, out_dir):
    """Write one JSONL file per subset plus a ``split.json`` header with SHA-256 digests."""
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    for name in SUBSETS:
        path = os.path.join(out_dir, name + ".jsonl")
        emit(split.subset(name), path, "jsonl")
        files[name] = {"path": name + ".jsonl", "count": len(split.subset(name)),
                       "sha256": file_digest(path)}
    header = {"format_version": FORMAT_VERSION, "config": asdict(config), "seed": config.seed,
              "files": files}
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2, ensure_ascii=False)
    return os.path.join(out_dir, MANIFEST_NAME)


def read_split(split_dir):
    """
    Load a split written by :func:`write_split`, verifying every subset digest.

    RETURNS
    ========
    (CorpusSplit, SplitConfig)
    """
    try:
        with open(os.path.join(split_dir, MANIFEST_NAME), encoding="utf-8") as f:
            header = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise SplitManifestError("Cannot read split manifest in {}: {}".format(split_dir, e)) from e
    if header.get("format_version") != FORMAT_VERSION:
        raise SplitManifestError("Unsupported split format version {}.".format(header.get("format_version")))
    params = dict(header["config"])
    params["multi_band"] = tuple(params["multi_band"])
    config = SplitConfig(**params)

    subsets = {}
    for name in SUBSETS:
        entry = header["files"][name]
        path = os.path.join(split_dir, entry["path"])
        if not os.path.exists(path):
            raise SplitManifestError("Split file {} is missing.".format(path))
        if file_digest(path) != entry["sha256"]:
            raise SplitManifestError("Split file {} does not match its recorded digest.".format(path))
        if entry["count"] == 0:
            subsets[name] = []
            continue
        try:
            ingested = ingest(path, "jsonl", origin=Origin.OTHER)
        except CorpusError as e:
            raise SplitManifestError("Split file {} is unreadable: {}".format(path, e)) from e
        if ingested.errors or len(ingested.pairs) != entry["count"]:
            raise SplitManifestError("Split file {} holds {} valid pairs but the manifest records {}.".format(
                path, len(ingested.pairs), entry["count"]))
        subsets[name] = ingested.pairs

    provenance = {p.source: Subset.TRAIN for p in subsets["train"]}
    provenance.update((p.source, Subset.VAL) for p in subsets["val_full"])
    provenance.update((p.source, Subset.TEST) for p in subsets["test_full"])
    split = CorpusSplit(provenance=provenance,
                        val_groups=group_by_source(subsets["val_full"]),
                        test_groups=group_by_source(subsets["test_full"]),
                        **subsets)
    return split, config
