"""Command-line entry points.

Subcommands: gen-corpus, simulate-rir, featurize, train, decode, score,
experiment.  Global flags --config/--seed/--out apply to every subcommand;
see the README for the config schema.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np


def _global_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", help="output file or directory")
    return p


def build_parser():
    shared = _global_flags()
    parser = argparse.ArgumentParser(prog="farasr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[shared], help="synthesize the toy corpus")
    p.add_argument("--train", type=int, default=240)
    p.add_argument("--dev", type=int, default=24)
    p.add_argument("--eval", type=int, default=48)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=10)

    p = sub.add_parser("simulate-rir", parents=[shared], help="synthesize impulse response banks")
    p.add_argument("--rooms", type=int, default=20, help="how many of the fixed room geometries to use")
    p.add_argument("--count", type=int, help="total responses (split 64:8:12 across train/dev/eval)")
    p.add_argument("--train", type=int, default=64)
    p.add_argument("--dev", type=int, default=8)
    p.add_argument("--eval", type=int, default=12)
    p.add_argument("--max-order", type=int, default=8)

    p = sub.add_parser("featurize", parents=[shared], help="extract and cache log-mel features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--stats", help="existing stats file to apply (default: compute and write)")

    p = sub.add_parser("train", parents=[shared], help="train one model per the config")
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--rir-dir", required=True)

    p = sub.add_parser("decode", parents=[shared], help="greedy-decode a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--rir-dir", help="apply held-out far-field responses before decoding")
    p.add_argument("--rir-split", default="eval")

    p = sub.add_parser("score", parents=[shared], help="CER/WER against a reference manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--hyp", required=True)

    p = sub.add_parser("experiment", parents=[shared], help="run the four-row comparison")

    return parser


def cmd_gen_corpus(args):
    from .corpus import generate_toy_corpus

    out = args.out or "corpus"
    counts = {"train": args.train, "dev": args.dev, "eval": args.eval}
    manifests = generate_toy_corpus(out, counts, seed=args.seed, min_len=args.min_len, max_len=args.max_len)
    for split, manifest in manifests.items():
        print(f"{split}: {len(manifest)} utterances")
    print(f"corpus written to {out}")
    return 0


def cmd_simulate_rir(args):
    from .farfield import ROOM_TABLE, build_rir_bank, write_rir_bank

    if not 1 <= args.rooms <= len(ROOM_TABLE):
        print(f"--rooms must be in 1..{len(ROOM_TABLE)}", file=sys.stderr)
        return 2
    if args.count:
        total = 64 + 8 + 12
        sizes = {
            "train": max(1, round(args.count * 64 / total)),
            "dev": max(1, round(args.count * 8 / total)),
            "eval": max(1, round(args.count * 12 / total)),
        }
    else:
        sizes = {"train": args.train, "dev": args.dev, "eval": args.eval}
    out = args.out or "rirs"
    rng = np.random.default_rng(args.seed)
    entries = build_rir_bank(rng, sizes=sizes, max_order=args.max_order, n_rooms=args.rooms)
    write_rir_bank(out, entries)
    print(f"{sum(sizes.values())} impulse responses written to {out}")
    return 0


def cmd_featurize(args):
    from .corpus import read_manifest
    from .dataset import compute_feature_stats
    from .frontend import FeatureStats, load_wav, mel_spectrogram, normalize_features, write_feature_cache

    manifest = read_manifest(args.manifest)
    out = args.out or "features"
    os.makedirs(out, exist_ok=True)
    if args.stats:
        stats = FeatureStats.load(args.stats)
    else:
        stats = compute_feature_stats(manifest)
        stats.save(os.path.join(out, "feature_stats.txt"))
    for e in manifest:
        feats = normalize_features(mel_spectrogram(load_wav(e.audio_path)), stats)
        write_feature_cache(os.path.join(out, f"{e.utt_id}.feat"), feats)
    print(f"{len(manifest)} utterances featurized into {out}")
    return 0


def _load_data(corpus_dir, rir_dir, chars):
    from .corpus import read_manifest
    from .dataset import DataSource, compute_feature_stats
    from .farfield import load_rir_bank
    from .seq2seq import Vocabulary

    manifests = {
        split: read_manifest(os.path.join(corpus_dir, f"manifest_{split}.tsv"), split=split)
        for split in ("train", "dev", "eval")
    }
    banks = load_rir_bank(rir_dir)
    stats = compute_feature_stats(manifests["train"])
    return DataSource(manifests, banks, stats, Vocabulary(chars)), stats


def cmd_train(args):
    from .config import model_config_from, critic_config_from, resolve_config, train_config_from
    from .invariance import Critic
    from .seq2seq import Seq2SeqModel
    from .training import MetricsWriter, Trainer

    cfg = resolve_config(args.config)
    model_cfg = model_config_from(cfg)
    train_cfg = train_config_from(cfg, seed=args.seed)
    out = args.out or "run"
    os.makedirs(out, exist_ok=True)
    data, stats = _load_data(args.corpus_dir, args.rir_dir, model_cfg.chars)
    stats.save(os.path.join(out, "feature_stats.txt"))
    model = Seq2SeqModel(model_cfg, np.random.default_rng([args.seed, 555]))
    critic = None
    if train_cfg.enhancer.mode == "wgan":
        critic = Critic(critic_config_from(cfg), model_cfg.encoder_dim, np.random.default_rng([args.seed, 556]))
    writer = MetricsWriter(os.path.join(out, "metrics.jsonl"))
    result = Trainer(model, data, train_cfg, critic=critic, metrics_writer=writer, out_dir=out).train()
    print(f"trained {result.steps_run} steps; best dev WER {result.best_dev_wer:.4f} "
          f"at step {result.best_step}; checkpoint: {result.checkpoint_path}")
    return 0


def cmd_decode(args):
    from .config import model_config_from, resolve_config
    from .corpus import read_manifest
    from .dataset import DataSource
    from .farfield import load_rir_bank
    from .frontend import FeatureStats, load_wav, mel_spectrogram, normalize_features
    from .seq2seq import Seq2SeqModel
    from .training import load_model_from_checkpoint

    cfg = resolve_config(args.config)
    model_cfg = model_config_from(cfg)
    model = Seq2SeqModel(model_cfg, np.random.default_rng(0))
    load_model_from_checkpoint(model, args.ckpt)
    stats = FeatureStats.load(args.stats)
    manifest = read_manifest(args.manifest)
    source = None
    if args.rir_dir:
        banks = load_rir_bank(args.rir_dir)
        source = DataSource({"eval": manifest}, banks, stats, model.vocab)
    out = args.out or "hyp.txt"
    with open(out, "w", encoding="utf-8") as fh:
        for e in manifest:
            if source is not None:
                rir = source.fixed_eval_rir(e.utt_id, args.rir_split)
                feats = source.farfield_features(e.utt_id, rir)
            else:
                feats = normalize_features(mel_spectrogram(load_wav(e.audio_path)), stats).frames
            hyp = model.greedy_decode(feats)
            fh.write(f"{e.utt_id}\t{hyp.text}\n")
    print(f"hypotheses written to {out}")
    return 0


def cmd_score(args):
    from .corpus import read_manifest
    from .metrics import score

    manifest = read_manifest(args.manifest)
    hyps = {}
    with open(args.hyp, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            utt_id, _, text = line.partition("\t")
            hyps[utt_id] = text
    report = score(manifest.entries, hyps)
    out = args.out or "score.jsonl"
    with open(out, "w") as fh:
        fh.write(report.to_jsonl())
    print(f"CER {report.cer:.4f}  WER {report.wer:.4f}  ({len(report.per_utt)} utterances)")
    print(f"report written to {out}")
    return 0


def cmd_experiment(args):
    from .config import experiment_spec_from, resolve_config
    from .experiment import run_experiment

    cfg = resolve_config(args.config)
    spec = experiment_spec_from(cfg)
    out = args.out or "experiment"
    report = run_experiment(spec, out)
    print(report.render_table())
    print(f"full report in {out}/report.jsonl")
    return 0


HANDLERS = {
    "gen-corpus": cmd_gen_corpus,
    "simulate-rir": cmd_simulate_rir,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "decode": cmd_decode,
    "score": cmd_score,
    "experiment": cmd_experiment,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    return HANDLERS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
