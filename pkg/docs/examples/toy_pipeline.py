import logging

from translit.corpus import SynthConfig, generate_synthetic, group_by_source
from translit.finetune import Direction, FinetuneConfig, run_schedule
from translit.metrics import evaluate
from translit.mlm import MaskingConfig, PretrainConfig, monolingual_samples, pretrain
from translit.model import FreezePolicy, ModelConfig, greedy_batch, init, set_freeze
from translit.splitter import SplitConfig, audit, build_split
from translit.tokenizer import build_vocab, encode_batch, trim_batch


def toy_pipeline(group_count=400, seed=0, use_mlm=True):
    """ Split, pretrain and fine-tune a small model on two synthetic domains.

    INPUTS
    =======
    group_count (optional, default 400): source groups of the primary domain; the
                                         secondary domain gets a quarter of that.
    seed (optional, default 0): seed for data generation, splitting and training.
    use_mlm (optional, default True): run denoising pretraining before fine-tuning.

    RETURNS
    =======
    result: ScheduleResult with the phase-1 and phase-2 records.
    scores: MetricReport of the final model on the primary test set.
    """
    primary = generate_synthetic(SynthConfig(group_count=group_count, seed=seed, sentence_len_range=(1, 3)))
    secondary = generate_synthetic(SynthConfig(group_count=group_count // 4, seed=seed + 1, domain="b",
                                               sentence_len_range=(1, 3)))
    split_config = SplitConfig(unique_val=20, unique_test=20, multi_val_groups=20, multi_test_groups=20,
                               seed=seed)
    split = build_split(group_by_source(primary), split_config)
    assert audit(split, split_config).passed

    vocab = build_vocab(primary + secondary)
    state = init(ModelConfig(vocab_size=vocab.size, d_model=32, n_heads=4, enc_layers=2, dec_layers=2,
                             ffn_dim=64, max_len=48, seed=seed))
    if use_mlm:
        set_freeze(state, FreezePolicy.MLM)
        samples = monolingual_samples(split.train + secondary, "roman_plus_urdu")
        state, _ = pretrain(state, vocab, samples,
                            PretrainConfig(epochs=2, batch_size=32, grad_accum_steps=1, learning_rate=2e-3,
                                           max_len=48, seed=seed),
                            MaskingConfig(seed=seed))
        set_freeze(state, FreezePolicy.NONE)

    config = FinetuneConfig(phase1_epochs=4, phase1_checkpoint_epoch=3, phase2_epochs=2, phase2_eval_epochs=(1, 2),
                            batch_size=32, grad_accum_steps=1, learning_rate=2e-3, max_len=48, seed=seed)
    result = run_schedule(config, state, vocab, split.train, secondary,
                          {"in-domain": split.test_small, "out-of-domain": secondary[-50:]}, progress=True)

    direction = Direction.ROMAN2UR
    inputs, refs = zip(*(direction.sides(p) for p in split.test_full))
    ids, _ = encode_batch(vocab, inputs, direction.source_lang, config.max_len)
    hyps = greedy_batch(result.state, vocab, trim_batch(ids), direction.target_lang, config.max_len)
    return result, evaluate(hyps, list(refs))


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    result, scores = toy_pipeline()
    for epoch in result.phase2.reported_epochs:
        print("phase-2 epoch {}: in-domain Char-BLEU {:.2f}, out-of-domain Char-BLEU {:.2f}".format(
            epoch, result.phase2.char_bleu("in-domain", epoch), result.phase2.char_bleu("out-of-domain", epoch)))
    print(scores.markdown_row("test_full"))
