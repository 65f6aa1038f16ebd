"""
Command-line interface of the translit toolkit.

Every subcommand reads its inputs, runs one pipeline stage and writes its
artifacts plus a ``run_manifest.json`` into ``--output-dir``. The manifest
lists the effective configuration, SHA-256 digests of every input and output,
the toolkit version and the stage timings.

Exit status: 0 on success, 1 when ``verify`` finds a failed audit, 2 on a
usage error or any toolkit error.
"""
import argparse
import datetime
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

from . import __version__, checkpoint
from .config import parse_value, read_config_file, resolve, snapshot
from .corpus import Origin, SynthConfig, emit, file_digest, generate_synthetic, group_by_source, ingest, \
    load_pairs
from .errors import ConfigError, TranslitError
from .finetune import Direction, FinetuneConfig, evaluate_model, run_schedule
from .llm_client import LlmConfig, score_transcript, transliterate_batch
from .metrics import evaluate
from .mlm import CorpusMode, MaskingConfig, PretrainConfig, monolingual_samples, pretrain
from .model import FreezePolicy, ModelConfig, beam_search, init, set_freeze
from .report import load_table, plot_loss_curves, render_table
from .splitter import MANIFEST_NAME as SPLIT_MANIFEST
from .splitter import SUBSETS, SplitConfig, audit, build_split, read_split, write_split
from .timer import timer
from .tokenizer import Vocabulary, build_vocab, encode

logger = logging.getLogger(__name__)

RUN_MANIFEST = "run_manifest.json"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass
class RunManifest:
    command: str
    argv: List[str]
    version: str = __version__
    config: Dict[str, dict] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    started_at: str = ""

    def add_inputs(self, *paths):
        for path in paths:
            if path is None:
                continue
            if os.path.isdir(path):
                path = os.path.join(path, SPLIT_MANIFEST)
            self.inputs[path] = file_digest(path)

    def add_outputs(self, *paths):
        for path in paths:
            if path is not None:
                self.outputs[path] = file_digest(path)

    def stage(self, name, func, *args, **kw):
        """Run ``func`` under the timer and record its wall-clock time as ``name``."""
        timed = timer(func)
        result = timed(*args, **kw)
        self.timings[name] = timed.last_elapsed
        return result

    def write(self, out_dir):
        path = os.path.join(out_dir, RUN_MANIFEST)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, ensure_ascii=False)
        return path


def _configs(args, sections, overrides):
    file_values = read_config_file(args.config) if args.config else {}
    configs = resolve(sections, file_values, overrides)
    return configs


def _load_vocab(path):
    vocab = Vocabulary.load(path)
    logger.info("Loaded vocabulary of %d symbols from %s", vocab.size, path)
    return vocab


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, ensure_ascii=False)
    return path


def _eval_sets(specs):
    sets = {}
    for spec in specs or []:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise ConfigError("--eval expects NAME=PATH, got '{}'.".format(spec))
        sets[name] = (path, load_pairs(path))
    return sets


# Subcommands ---------------------------------------------------------------

def cmd_ingest(args, run):
    result = run.stage("ingest", ingest, args.input, args.format, Origin(args.origin))
    pairs_path = os.path.join(args.output_dir, "pairs.jsonl")
    emit(result.pairs, pairs_path, "jsonl")
    errors_path = os.path.join(args.output_dir, "rejected.jsonl")
    with open(errors_path, "w", encoding="utf-8", newline="\n") as f:
        for error in result.errors:
            f.write(json.dumps(error._asdict(), ensure_ascii=False) + "\n")
    run.add_inputs(args.input)
    run.add_outputs(pairs_path, errors_path)
    print("Ingested {} pairs ({} malformed rows).".format(len(result.pairs), len(result.errors)))
    return 0


def cmd_synth(args, run):
    configs = _configs(args, {"synth": SynthConfig}, {"synth": {
        "group_count": args.groups, "max_variants": args.max_variants, "seed": args.seed,
        "domain": args.domain, "for_full_split": args.for_full_split or None}})
    config = configs["synth"]
    run.config["synth"] = snapshot(config)
    pairs = run.stage("synth", generate_synthetic, config)
    path = os.path.join(args.output_dir, "pairs.jsonl")
    emit(pairs, path, "jsonl")
    run.add_outputs(path)
    print("Generated {} pairs in {} groups.".format(len(pairs), config.group_count))
    return 0


def cmd_split(args, run):
    config = _configs(args, {"split": SplitConfig}, {"split": {
        "seed": args.seed, "small_eval_size": args.small_eval_size}})["split"]
    run.config["split"] = snapshot(config)
    pairs = [p for path in args.input for p in load_pairs(path)]
    groups = group_by_source(pairs)
    split = run.stage("split", build_split, groups, config)
    manifest = write_split(split, config, args.output_dir)
    report = run.stage("audit", audit, split, config, args.strict, groups)
    audit_path = _write_json(os.path.join(args.output_dir, "audit.json"), report.to_dict())
    run.add_inputs(*args.input)
    run.add_outputs(manifest, audit_path,
                    *[os.path.join(args.output_dir, name + ".jsonl") for name in SUBSETS])
    print("Split {} groups: train {}, val {}+{}, test {}+{} pairs.".format(
        len(groups), len(split.train), len(split.val_full), len(split.val_small),
        len(split.test_full), len(split.test_small)))
    return 0


def print_audit(report):
    """Print an audit outcome and every finding."""
    print("Audit {}.".format("passed" if report.passed else "FAILED"))
    for violation in report.overlap_violations:
        print("overlap: '{}' in {}".format(violation.source, ", ".join(violation.subsets)))
    for failure in report.inclusion_failures:
        print("inclusion: '{}' in {}: {}".format(failure.source, failure.subset, failure.message))
    if not report.counts_ok:
        print("counts: unique {} multi {} small {}".format(report.unique_counts, report.multi_counts,
                                                          report.small_counts))
    for hit in report.partial_repetition_hits:
        print("partial repetition ({}): train '{}' / eval '{}'".format(
            hit.relation, hit.train_sentence, hit.eval_sentence))


def cmd_verify(args, run):
    split, config = read_split(args.input)
    run.config["split"] = snapshot(config)
    groups = group_by_source(load_pairs(args.corpus)) if args.corpus else None
    report = run.stage("audit", audit, split, config, args.strict, groups)
    audit_path = _write_json(os.path.join(args.output_dir, "audit.json"), report.to_dict())
    run.add_inputs(args.input, args.corpus)
    run.add_outputs(audit_path)
    print_audit(report)
    return 0 if report.passed else 1


def cmd_build_vocab(args, run):
    pairs = [p for path in args.input for p in load_pairs(path)]
    vocab = run.stage("build_vocab", build_vocab, pairs)
    path = os.path.join(args.output_dir, "vocab.txt")
    vocab.save(path)
    run.add_inputs(*args.input)
    run.add_outputs(path)
    print("Vocabulary of {} symbols.".format(vocab.size))
    return 0


def _model_state(args, run, model_config, policy):
    if args.init:
        state = checkpoint.load(args.init).state
        run.add_inputs(args.init)
        logger.info("Initialized from checkpoint %s", args.init)
    else:
        state = init(model_config)
    run.config["model"] = snapshot(state.config)
    return set_freeze(state, policy)


def _check_vocab(state, vocab):
    if state.config.vocab_size != vocab.size:
        raise ConfigError("Checkpoint vocabulary size {} does not match the vocabulary file ({}).".format(
            state.config.vocab_size, vocab.size))


def cmd_pretrain(args, run):
    vocab = _load_vocab(args.vocab)
    configs = _configs(args, {"model": ModelConfig, "pretrain": PretrainConfig, "masking": MaskingConfig}, {
        "model": {"vocab_size": vocab.size, "seed": args.seed},
        "pretrain": {"seed": args.seed, "epochs": args.epochs, "corpus_mode": args.corpus_mode},
        "masking": {"seed": args.seed, "mask_rate": args.mask_rate}})
    for name in ("pretrain", "masking"):
        run.config[name] = snapshot(configs[name])
    state = _model_state(args, run, configs["model"], FreezePolicy.MLM)
    _check_vocab(state, vocab)
    pairs = [p for path in args.input for p in load_pairs(path)]
    samples = monolingual_samples(pairs, configs["pretrain"].corpus_mode)
    state, record = run.stage("pretrain", pretrain, state, vocab, samples, configs["pretrain"],
                              configs["masking"], args.output_dir, not args.no_progress)
    record_path = _write_json(os.path.join(args.output_dir, "mlm_record.json"), asdict(record))
    run.add_inputs(args.vocab, *args.input)
    run.add_outputs(*record.checkpoints, os.path.join(args.output_dir, "mlm_loss.csv"), record_path)
    print("Pretrained {} epochs: loss {:.4f} -> {:.4f}.".format(
        len(record.losses), record.initial_loss, record.losses[-1]))
    return 0


def cmd_finetune(args, run):
    vocab = _load_vocab(args.vocab)
    eval_epochs = parse_value(Tuple[int, ...], args.phase2_eval_epochs) \
        if args.phase2_eval_epochs is not None else None
    configs = _configs(args, {"model": ModelConfig, "finetune": FinetuneConfig}, {
        "model": {"vocab_size": vocab.size, "seed": args.seed},
        "finetune": {"seed": args.seed, "direction": args.direction, "phase1_epochs": args.phase1_epochs,
                     "phase1_checkpoint_epoch": args.checkpoint_epoch, "phase2_epochs": args.phase2_epochs,
                     "phase2_eval_epochs": eval_epochs}})
    config = configs["finetune"]
    run.config["finetune"] = snapshot(config)
    state = _model_state(args, run, configs["model"], FreezePolicy.NONE)
    _check_vocab(state, vocab)
    phase1 = [p for path in args.input for p in load_pairs(path)]
    phase2 = [p for path in args.phase2_input for p in load_pairs(path)]
    eval_sets = _eval_sets(args.eval)
    result = run.stage("finetune", run_schedule, config, state, vocab, phase1, phase2,
                       {name: pairs for name, (_, pairs) in eval_sets.items()}, args.output_dir,
                       not args.no_progress)
    run.add_inputs(args.vocab, *args.input, *args.phase2_input, *[path for path, _ in eval_sets.values()])
    for record in (result.phase1, result.phase2):
        run.add_outputs(*[epoch.checkpoint for epoch in record.epochs])
        run.add_outputs(*[os.path.join(args.output_dir, record.phase + suffix)
                          for suffix in ("_record.json", "_loss.csv", "_eval.csv")])
    for name in eval_sets:
        for epoch in result.phase2.reported_epochs:
            print("{} after phase-2 epoch {}: Char-BLEU {:.2f}".format(
                name, epoch, result.phase2.char_bleu(name, epoch)))
    return 0


def _beam_decode(state, vocab, pairs, direction, width):
    hyps = []
    for pair in pairs:
        src = encode(vocab, direction.sides(pair)[0], direction.source_lang, state.config.max_len)
        hyps.append(beam_search(state, vocab, src, direction.target_lang, width))
    return hyps


def cmd_evaluate(args, run):
    direction = Direction(args.direction)
    pairs = load_pairs(args.input)
    refs = [direction.sides(p)[1] for p in pairs]
    if args.hypotheses:
        with open(args.hypotheses, encoding="utf-8") as f:
            hyps = f.read().split("\n")[:len(refs)]
        metrics = run.stage("evaluate", evaluate, hyps, refs)
        run.add_inputs(args.hypotheses)
    else:
        if not (args.checkpoint and args.vocab):
            raise ConfigError("evaluate needs --hypotheses, or --checkpoint together with --vocab.")
        vocab = _load_vocab(args.vocab)
        state = checkpoint.load(args.checkpoint).state
        _check_vocab(state, vocab)
        run.config["model"] = snapshot(state.config)
        if args.beam_width > 1:
            hyps = run.stage("decode", _beam_decode, state, vocab, pairs, direction, args.beam_width)
            metrics = evaluate(hyps, refs)
        else:
            hyps = None
            metrics = run.stage("evaluate", evaluate_model, state, vocab, pairs, direction)
        run.add_inputs(args.checkpoint, args.vocab)
        if hyps is not None:
            path = os.path.join(args.output_dir, "hypotheses.txt")
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                f.write("\n".join(hyps) + "\n")
            run.add_outputs(path)
    run.config["evaluate"] = {"direction": direction.value, "beam_width": args.beam_width}
    metrics_path = _write_json(os.path.join(args.output_dir, "metrics.json"), metrics.to_dict())
    run.add_inputs(args.input)
    run.add_outputs(metrics_path)
    print(metrics.markdown_row(direction.value))
    return 0


def cmd_llm_eval(args, run):
    config = _configs(args, {"llm": LlmConfig}, {"llm": {
        "model": args.model, "max_in_flight": args.max_in_flight}})["llm"]
    run.config["llm"] = snapshot(config)
    direction = Direction(args.direction)
    pairs = load_pairs(args.input)
    items = [(direction.sides(p)[0], direction) for p in pairs]
    transcript = run.stage("llm", transliterate_batch, items, config, args.transport, args.fixture)
    transcript_path = os.path.join(args.output_dir, "transcript.jsonl")
    transcript.to_jsonl(transcript_path)
    metrics = score_transcript(transcript, [direction.sides(p)[1] for p in pairs])
    metrics_path = _write_json(os.path.join(args.output_dir, "metrics.json"), metrics.to_dict())
    run.add_inputs(args.input, args.fixture)
    run.add_outputs(transcript_path, metrics_path)
    print(metrics.markdown_row(config.model, direction.value))
    return 0


def cmd_report(args, run):
    if not args.input and not args.loss_csv:
        raise ConfigError("report needs at least one --input table or --loss-csv file.")
    for path in args.input:
        doc = load_table(path)
        stem = os.path.splitext(os.path.basename(path))[0]
        run.add_inputs(path)
        run.add_outputs(*render_table(doc, args.output_dir, stem))
    if args.loss_csv:
        png = run.stage("plot", plot_loss_curves, args.loss_csv, os.path.join(args.output_dir, "loss_curves.png"),
                        args.title)
        run.add_inputs(*args.loss_csv)
        run.add_outputs(png)
    print("Wrote {} file(s) to {}.".format(len(run.outputs), args.output_dir))
    return 0


# Parser --------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default=".", help="directory for the artifacts and run_manifest.json")
    common.add_argument("--config", help="flat key=value configuration file")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--vocab", required=True, help="vocabulary file from build-vocab")
    training.add_argument("--seed", type=int, required=True, help="seed for initialization, masking and shuffling")
    training.add_argument("--init", help="checkpoint to start from instead of a fresh initialization")
    training.add_argument("--no-progress", action="store_true", help="hide progress bars")

    parser = argparse.ArgumentParser(prog="translit", description="Roman-Urdu / Urdu transliteration toolkit.")
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="normalize a TSV/JSONL corpus")
    p.add_argument("--input", required=True, help="corpus file")
    p.add_argument("--format", choices=["tsv", "jsonl"], help="defaults to the file suffix")
    p.add_argument("--origin", default="other", choices=[o.value for o in Origin])
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic variation-rich corpus")
    p.add_argument("--groups", type=int, help="number of source groups")
    p.add_argument("--max-variants", type=int)
    p.add_argument("--domain", choices=["a", "b"])
    p.add_argument("--seed", type=int)
    p.add_argument("--for-full-split", action="store_true", help="require enough groups for a default split")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="leakage-free train/val/test split")
    p.add_argument("--input", required=True, nargs="+", help="corpus file(s)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--small-eval-size", type=int)
    p.add_argument("--strict", action="store_true", help="partial repetitions fail the audit")
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("verify", parents=[common], help="audit a split directory")
    p.add_argument("--input", required=True, help="split directory")
    p.add_argument("--corpus", help="original corpus, to check that eval groups are complete")
    p.add_argument("--strict", action="store_true", help="partial repetitions fail the audit")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("build-vocab", parents=[common], help="character vocabulary of corpora")
    p.add_argument("--input", required=True, nargs="+", help="corpus file(s)")
    p.set_defaults(handler=cmd_build_vocab)

    p = sub.add_parser("pretrain", parents=[common, training], help="masked-language-model pretraining")
    p.add_argument("--input", required=True, nargs="+", help="corpus file(s)")
    p.add_argument("--corpus-mode", choices=[m.value for m in CorpusMode])
    p.add_argument("--epochs", type=int)
    p.add_argument("--mask-rate", type=float)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common, training], help="two-phase fine-tuning")
    p.add_argument("--input", required=True, nargs="+", help="phase-1 corpus file(s)")
    p.add_argument("--phase2-input", nargs="*", default=[], help="phase-2 corpus file(s)")
    p.add_argument("--direction", choices=[d.value for d in Direction])
    p.add_argument("--eval", action="append", metavar="NAME=PATH", help="evaluation set, repeatable")
    p.add_argument("--phase1-epochs", type=int)
    p.add_argument("--checkpoint-epoch", type=int, help="phase-1 epoch phase 2 starts from")
    p.add_argument("--phase2-epochs", type=int)
    p.add_argument("--phase2-eval-epochs", help="comma-separated phase-2 epochs to report")
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint or a hypotheses file")
    p.add_argument("--input", required=True, help="evaluation corpus")
    p.add_argument("--direction", required=True, choices=[d.value for d in Direction])
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--hypotheses", help="one hypothesis per line, instead of decoding")
    p.add_argument("--beam-width", type=int, default=1, help="1 decodes greedily")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("llm-eval", parents=[common], help="zero-shot LLM baseline")
    p.add_argument("--input", required=True, help="evaluation corpus")
    p.add_argument("--direction", required=True, choices=[d.value for d in Direction])
    p.add_argument("--transport", default="http", choices=["http", "mock"])
    p.add_argument("--fixture", help="JSONL responses for the mock transport")
    p.add_argument("--model")
    p.add_argument("--max-in-flight", type=int)
    p.set_defaults(handler=cmd_llm_eval)

    p = sub.add_parser("report", parents=[common], help="render result tables and loss curves")
    p.add_argument("--input", nargs="*", default=[], help="JSON table document(s)")
    p.add_argument("--loss-csv", nargs="*", default=[], help="epoch,split,loss file(s) to plot")
    p.add_argument("--title", help="title of the loss plot")
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    run = RunManifest(args.command, argv, started_at=datetime.datetime.now().isoformat(timespec="seconds"))
    try:
        os.makedirs(args.output_dir, exist_ok=True)
        status = run.stage("total", args.handler, args, run)
        run.write(args.output_dir)
    except (TranslitError, OSError, ValueError) as e:
        logger.error("%s", e)
        return 2
    return status


if __name__ == "__main__":
    sys.exit(main())
