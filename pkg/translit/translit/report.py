"""
Result tables and loss-curve plots.

A table document is JSON of the form ``{"kind": ..., "title": ..., "rows": [...]}``.
Rows are lists in column order or objects keyed by column name. Numbers are
kept as the text they were written with, so ``80.966`` and ``76.50`` come out
exactly as given.
"""
import csv
import json
import logging
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import TranslitError  # noqa: E402

logger = logging.getLogger(__name__)

_METRIC_PAIRS = [(metric, domain) for metric in ("BLEU", "Char-BLEU", "CHRF")
                 for domain in ("in-domain", "out-of-domain")]

TABLE_COLUMNS = {
    "bleu_comparison": ["Method", "BLEU Score"],
    "char_bleu": ["Model Variant", "Trained on", "Tested on", "Without MLM", "With MLM"],
    "appendix": (["Configuration", "Model", "Epoch"]
                 + ["LLM {} {}".format(m, d) for m, d in _METRIC_PAIRS]
                 + ["{} {}".format(m, d) for m, d in _METRIC_PAIRS]),
}


class ReportError(TranslitError):
    """A table document or loss file cannot be rendered."""


def _cell(value):
    if value is None:
        return "–"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def validate_table(doc):
    """Check a table document and return its rows as lists of strings in column order."""
    if not isinstance(doc, dict) or doc.get("kind") not in TABLE_COLUMNS:
        raise ReportError("Table kind must be one of {}, got {!r}.".format(
            ", ".join(TABLE_COLUMNS), doc.get("kind") if isinstance(doc, dict) else doc))
    columns = TABLE_COLUMNS[doc["kind"]]
    rows = doc.get("rows")
    if not isinstance(rows, list):
        raise ReportError("Table '{}' has no list of rows.".format(doc.get("title", "")))
    out = []
    for i, row in enumerate(rows, start=1):
        if isinstance(row, dict):
            missing = [c for c in columns if c not in row]
            if missing:
                raise ReportError("Row {} lacks column(s) {}.".format(i, ", ".join(missing)))
            row = [row[c] for c in columns]
        if len(row) != len(columns):
            raise ReportError("Row {} has {} cells but a {} table has {} columns.".format(
                i, len(row), doc["kind"], len(columns)))
        out.append([_cell(v) for v in row])
    return out


def load_table(path):
    """Read a table document, keeping every number as its literal text."""
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f, parse_float=str, parse_int=str)
    except (OSError, ValueError) as e:
        raise ReportError("Cannot read table document {}: {}".format(path, e))
    validate_table(doc)
    return doc


def render_markdown(doc):
    """
    Markdown rendering of a table document.

    >>> print(render_markdown({"kind": "bleu_comparison", "title": "",
    ...                        "rows": [["Our Work", "94.586"]]}))
    | Method | BLEU Score |
    | --- | --- |
    | Our Work | 94.586 |
    """
    rows = validate_table(doc)
    columns = TABLE_COLUMNS[doc["kind"]]
    lines = []
    if doc.get("title"):
        lines += ["**{}**".format(doc["title"]), ""]
    lines.append("| " + " | ".join(columns) + " |")
    lines.append("| " + " | ".join("---" for _ in columns) + " |")
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines)


def write_csv(doc, path):
    rows = validate_table(doc)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS[doc["kind"]])
        writer.writerows(rows)
    return path


def render_table(doc, out_dir, stem=None):
    """Write ``{stem}.md`` and ``{stem}.csv`` (stem defaults to the kind); returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or doc["kind"]
    md_path = os.path.join(out_dir, stem + ".md")
    with open(md_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(render_markdown(doc) + "\n")
    csv_path = write_csv(doc, os.path.join(out_dir, stem + ".csv"))
    logger.info("Wrote %s table to %s and %s", doc["kind"], md_path, csv_path)
    return md_path, csv_path


def ordinal(n):
    """
    >>> [ordinal(n) for n in (1, 2, 3, 5, 11, 22)]
    ['1st', '2nd', '3rd', '5th', '11th', '22nd']
    """
    if 10 <= n % 100 <= 20:
        return "{}th".format(n)
    return "{}{}".format(n, {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th"))


def appendix_rows(configuration, model, phase2, llm_scores, in_domain, out_of_domain, digits=3):
    """
    Appendix rows for one configuration from a phase-2 record.

    INPUTS
    =======
    configuration: label of the pretraining variant, e.g. "With MLM".
    model: direction label, e.g. "roman2ur".
    phase2: TrainRunRecord or its dictionary form; its baseline is the phase-1
            checkpoint "without further fine-tuning".
    llm_scores: {eval set: MetricReport dictionary} of the zero-shot baseline,
                repeated on every row.
    in_domain, out_of_domain: evaluation set names.

    RETURNS
    ========
    list of row lists: the baseline row, then one per reported epoch.
    """
    if not isinstance(phase2, dict):
        phase2 = phase2.to_dict()
    keys = {"BLEU": "bleu", "Char-BLEU": "char_bleu", "CHRF": "chrf"}
    sets = {"in-domain": in_domain, "out-of-domain": out_of_domain}

    def numbers(scores):
        try:
            return [format(scores[sets[d]][keys[m]], ".{}f".format(digits)) for m, d in _METRIC_PAIRS]
        except KeyError as e:
            raise ReportError("Scores lack evaluation set or metric {}.".format(e))

    llm = numbers(llm_scores)
    rows = [[configuration, model, "Without further fine-tuning"] + llm + numbers(phase2["baseline"])]
    for epoch in phase2["reported_epochs"]:
        if epoch > len(phase2["epochs"]):
            raise ReportError("Phase 2 ran {} epochs; epoch {} cannot be reported.".format(
                len(phase2["epochs"]), epoch))
        scores = phase2["epochs"][epoch - 1]["scores"]
        rows.append([configuration, model, ordinal(epoch)] + llm + numbers(scores))
    return rows


def read_loss_csv(path):
    """{split: ([epochs], [losses])} from an ``epoch,split,loss`` file."""
    curves = {}
    try:
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                epochs, losses = curves.setdefault(row["split"], ([], []))
                epochs.append(int(row["epoch"]))
                losses.append(float(row["loss"]))
    except (OSError, KeyError, ValueError) as e:
        raise ReportError("Cannot read loss curve {}: {}".format(path, e))
    if not curves:
        raise ReportError("Loss file {} has no rows.".format(path))
    return curves


def plot_loss_curves(paths, out_png, title=None):
    """
    Plot the loss curves of one or more ``epoch,split,loss`` files into a PNG.

    Each file and split becomes one line labelled ``{file stem} {split}``.
    """
    if isinstance(paths, str):
        paths = [paths]
    fig, ax = plt.subplots(1, 1, figsize=(8, 5))
    for path in paths:
        stem = os.path.splitext(os.path.basename(path))[0]
        for split, (epochs, losses) in read_loss_csv(path).items():
            ax.plot(epochs, losses, marker="o", label="{} {}".format(stem, split))
    ax.set_xlabel("epoch", size=14)
    ax.set_ylabel("loss", size=14)
    ax.tick_params(labelsize=12)
    if title:
        ax.set_title(title, size=14)
    ax.legend()
    fig.savefig(out_png, dpi=100, bbox_inches="tight")
    plt.close(fig)
    logger.info("Plotted %d loss file(s) to %s", len(paths), out_png)
    return out_png
