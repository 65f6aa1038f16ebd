"""Corpus BLEU-4, character-level BLEU and CHRF.

All scores are on the 0-100 scale and aggregate n-gram statistics over the
whole corpus before combining them. Texts are scored exactly as given; any
normalization happens upstream in :mod:`translit.corpus`.
"""
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import List, Optional

from .errors import TranslitError


class MetricInputError(TranslitError):
    """Hypotheses and references are empty or do not line up."""


@dataclass
class BleuBreakdown:
    precisions: List[Optional[float]]
    matches: List[int]
    totals: List[int]
    bp: float
    hyp_len: int
    ref_len: int
    score: float


@dataclass
class ChrfBreakdown:
    precisions: List[float]
    recalls: List[float]
    f_scores: List[float]
    beta: float
    score: float


def extract_ngrams(tokens, n):
    """Counter of the n-grams (as tuples) of a token sequence."""
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _references(hyps, refs, single=False):
    if len(hyps) != len(refs):
        raise MetricInputError("Got {} hypotheses but {} references.".format(len(hyps), len(refs)))
    if not hyps:
        raise MetricInputError("Cannot score an empty corpus.")
    out = []
    for i, ref in enumerate(refs):
        ref = [ref] if isinstance(ref, str) else list(ref)
        if not ref:
            raise MetricInputError("Sentence {} has no reference.".format(i))
        if single and len(ref) > 1:
            raise MetricInputError("Sentence {} has {} references; CHRF takes one.".format(i, len(ref)))
        out.append(ref)
    return out


def _closest_length(hyp_len, ref_lens):
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def _statistics(hyp_tokens, ref_tokens, max_order):
    matches, totals = [0] * max_order, [0] * max_order
    hyp_len = ref_len = 0
    for hyp, refs in zip(hyp_tokens, ref_tokens):
        hyp_len += len(hyp)
        ref_len += _closest_length(len(hyp), [len(r) for r in refs])
        for n in range(1, max_order + 1):
            hyp_counts = extract_ngrams(hyp, n)
            max_ref = Counter()
            for ref in refs:
                max_ref |= extract_ngrams(ref, n)
            matches[n - 1] += sum(min(count, max_ref[gram]) for gram, count in hyp_counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def compute_bleu(matches, totals, hyp_len, ref_len, smooth=False):
    """
    BLEU from sufficient statistics.

    Orders with no hypothesis n-gram at all are left out of the geometric
    mean and report a precision of None. Unsmoothed, any remaining zero
    precision makes the score 0; with ``smooth`` orders above 1 use add-one
    counts.
    """
    precisions = []
    for n, (match, total) in enumerate(zip(matches, totals), start=1):
        if smooth and n > 1:
            precisions.append((match + 1) / (total + 1))
        else:
            precisions.append(match / total if total else None)
    effective = [p for p in precisions if p is not None]
    if hyp_len == 0:
        bp = 0.0
    else:
        bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    if hyp_len == 0 or not effective or min(effective) == 0:
        score = 0.0
    else:
        score = 100 * bp * math.exp(sum(math.log(p) for p in effective) / len(effective))
    return BleuBreakdown(precisions, list(matches), list(totals), bp, hyp_len, ref_len, score)


def bleu_corpus(hyps, refs, max_order=4):
    """
    Corpus BLEU over whitespace tokens.

    INPUTS
    =======
    hyps: list of hypothesis texts.
    refs: one entry per hypothesis, a reference text or a list of them.
    max_order (optional, default 4): largest n-gram order.

    RETURNS
    ========
    BleuBreakdown. The brevity penalty uses, per sentence, the reference
    length closest to the hypothesis (the shorter one on ties).

    >>> bleu_corpus(["a b c d"], ["a b c d"]).score
    100.0
    """
    refs = _references(hyps, refs)
    return compute_bleu(*_statistics([h.split() for h in hyps],
                                     [[r.split() for r in rs] for rs in refs], max_order))


def char_bleu(hyps, refs, max_order=4):
    """BLEU whose tokens are the characters of each text, spaces included."""
    refs = _references(hyps, refs)
    return compute_bleu(*_statistics([list(h) for h in hyps],
                                     [[list(r) for r in rs] for rs in refs], max_order))


def bleu_sentence(hyp, refs, max_order=4):
    """Diagnostic sentence BLEU with add-one smoothing on orders above 1."""
    refs = _references([hyp], [refs])
    return compute_bleu(*_statistics([hyp.split()], [[r.split() for r in refs[0]]], max_order),
                        smooth=True)


def chrf(hyps, refs, max_order=6, beta=2.0):
    """
    Character n-gram F-score with whitespace removed.

    Per order, precision and recall come from corpus-level clipped counts
    (0 when their denominator is 0) and are combined into an F-beta score;
    the result is the mean F over orders that have n-grams on either side.
    If no order has any n-gram the score is 100.
    """
    refs = _references(hyps, refs, single=True)
    matches, hyp_totals, ref_totals = [0] * max_order, [0] * max_order, [0] * max_order
    for hyp, (ref,) in zip(hyps, refs):
        hyp, ref = "".join(hyp.split()), "".join(ref.split())
        for n in range(1, max_order + 1):
            hyp_counts, ref_counts = extract_ngrams(hyp, n), extract_ngrams(ref, n)
            matches[n - 1] += sum((hyp_counts & ref_counts).values())
            hyp_totals[n - 1] += sum(hyp_counts.values())
            ref_totals[n - 1] += sum(ref_counts.values())

    precisions, recalls, f_scores = [], [], []
    beta2 = beta ** 2
    for match, hyp_total, ref_total in zip(matches, hyp_totals, ref_totals):
        p = match / hyp_total if hyp_total else 0.0
        r = match / ref_total if ref_total else 0.0
        precisions.append(p)
        recalls.append(r)
        if hyp_total == 0 and ref_total == 0:
            continue
        f_scores.append((1 + beta2) * p * r / (beta2 * p + r) if p + r > 0 else 0.0)
    score = 100 * sum(f_scores) / len(f_scores) if f_scores else 100.0
    return ChrfBreakdown(precisions, recalls, f_scores, beta, score)


@dataclass
class MetricReport:
    bleu: float
    char_bleu: float
    chrf: float
    sentences: int

    def to_dict(self):
        return asdict(self)

    def markdown_row(self, *labels):
        cells = list(labels) + ["{:.2f}".format(v) for v in (self.bleu, self.char_bleu, self.chrf)]
        return "| " + " | ".join(cells) + " |"


def evaluate(hyps, refs):
    """BLEU-4, Char-BLEU and CHRF of one corpus; CHRF uses the first reference."""
    bleu = bleu_corpus(hyps, refs).score
    first = [r[0] for r in _references(hyps, refs)]
    return MetricReport(bleu, char_bleu(hyps, refs).score, chrf(hyps, first).score, len(hyps))
