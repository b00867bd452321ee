"""``afa`` command line: train, eval, sweep, gen-planted, viz.

Exit codes: 0 ok, 2 config/input error, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import checkpoint, corpus, evaluation, viz
from .config import ConfigError, RngStreams, TrainConfig, load_config
from .trainer import TrainingAborted, build_models, fit

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


def _dump(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_data(cfg, vocab, path):
    return corpus.load_jsonl(path, vocab, cfg.max_len, cfg.num_classes) if path else []


def _attach_planted_meta(data, path):
    with open(path, encoding="utf-8") as fh:
        meta = json.load(fh)
    positions = meta["signal_positions"]
    if len(positions) != len(data):
        raise corpus.DataError(f"{path}: {len(positions)} entries for {len(data)} examples")
    for e, p in zip(data, positions):
        e.signal_positions = [i for i in p if i < len(e.token_ids)]
    return data


def _run_dir_config(checkpoint_path, cfg_path):
    path = cfg_path or os.path.join(os.path.dirname(checkpoint_path), "config.txt")
    return load_config(path) if os.path.exists(path) else TrainConfig()


def _vocab_for(checkpoint_path, vocab_path):
    path = vocab_path or os.path.join(os.path.dirname(checkpoint_path), "vocab.json")
    with open(path, encoding="utf-8") as fh:
        return corpus.Vocab.from_json(fh.read())


def cmd_train(args):
    cfg = load_config(args.config, seed=args.seed)
    if not cfg.train_path:
        raise ConfigError("train_path: required for training")
    print(cfg.to_text(), end="")
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    vocab = corpus.build_vocab(corpus.read_texts(cfg.train_path), cfg.min_count)
    train = _load_data(cfg, vocab, cfg.train_path)
    valid = _load_data(cfg, vocab, cfg.valid_path)
    test = _load_data(cfg, vocab, cfg.test_path)
    rngs = RngStreams(cfg.seed)
    emb = None
    if cfg.embeddings_path:
        emb = corpus.load_embeddings(cfg.embeddings_path, vocab, cfg.d_model, rngs.init_target,
                                     cfg.embed_scale)
    target, disc = build_models(cfg, len(vocab), rngs, emb)
    with open(os.path.join(out, "vocab.json"), "w", encoding="utf-8") as fh:
        fh.write(vocab.to_json())
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    hist = fit(target, disc if cfg.adversarial else None, train, cfg, rngs, valid=valid, out_dir=out)
    models = {"target": target}
    if cfg.adversarial:
        models["discriminator"] = disc
    checkpoint.save(os.path.join(out, "final.afa"), models)
    eval_set, name = (test, "test") if test else (valid, "valid") if valid else (train, "train")
    metrics = evaluation.evaluate(target, eval_set, cfg.num_classes)
    _dump(os.path.join(out, "metrics.json"), {"split": name, **metrics.to_dict()})
    print(f"{'epoch':>5} {'train_cls':>10} {'valid_acc':>10}")
    for e in hist.epochs:
        print(f"{e['epoch']:>5} {e['train_loss_cls']:>10.4f} {e.get('valid_accuracy', float('nan')):>10.4f}")
    print(f"{name}: accuracy={metrics.accuracy:.4f} macro_p={metrics.macro_p:.4f} "
          f"macro_r={metrics.macro_r:.4f} macro_f1={metrics.macro_f1:.4f}")
    return EXIT_OK


def cmd_eval(args):
    target, _ = checkpoint.load_models(args.checkpoint)
    cfg = _run_dir_config(args.checkpoint, args.config)
    vocab = _vocab_for(args.checkpoint, args.vocab)
    data = _load_data(cfg, vocab, args.data)
    if args.planted_meta:
        _attach_planted_meta(data, args.planted_meta)
    os.makedirs(args.out_dir, exist_ok=True)
    metrics = evaluation.evaluate(target, data, target.num_classes)
    report = metrics.to_dict()
    if args.planted_meta:
        report["signal_attention_mass"] = evaluation.signal_attention_mass(target, data)
        report["signal_top1_rate"] = evaluation.signal_top1_rate(target, data)
    _dump(os.path.join(args.out_dir, "metrics.json"), report)
    print(f"accuracy={metrics.accuracy:.4f} macro_f1={metrics.macro_f1:.4f}")
    if args.deletion is not None:
        curve = evaluation.deletion_curve(target, data, args.deletion, rerank=args.rerank)
        _dump(os.path.join(args.out_dir, "deletion.json"), curve.to_dict())
        for n, acc in curve.points:
            print(f"deleted={n} accuracy={acc:.4f}")
        if curve.points:
            pts = np.array(curve.points)
            viz.render_curve_svg({"accuracy": (pts[:, 0], pts[:, 1])},
                                 os.path.join(args.out_dir, "deletion.svg"), title="token deletion",
                                 xlabel="tokens removed", ylabel="accuracy")
    if args.viz:
        _write_heatmaps(target, vocab, data[:args.viz], args.out_dir)
    return EXIT_OK


def _write_heatmaps(target, vocab, data, out_dir):
    if not data:
        return
    pred, rows = evaluation.predict_all(target, data)
    for i, (e, p, a) in enumerate(zip(data, pred, rows)):
        tokens = [vocab.tokens[t] for t in e.token_ids]
        viz.render_attention_html(tokens, a, int(p), e.label, os.path.join(out_dir, f"attention_{i:04d}.html"))


def cmd_sweep(args):
    cfg = load_config(args.config, seed=args.seed)
    print(cfg.to_text(), end="")
    if not (cfg.train_path and cfg.test_path):
        raise ConfigError("train_path/test_path: both required for a sweep")
    try:
        ks = [int(v) for v in args.k_values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--k-values: cannot parse {args.k_values!r}") from None
    if not ks or min(ks) < 1:
        raise ConfigError("--k-values: need positive integers")
    if args.trials < 2:
        raise ConfigError("--trials: must be >= 2")
    vocab = corpus.build_vocab(corpus.read_texts(cfg.train_path), cfg.min_count)
    train = _load_data(cfg, vocab, cfg.train_path)
    test = _load_data(cfg, vocab, cfg.test_path)
    res = evaluation.sweep_k(cfg, train, test, len(vocab), ks, args.trials, args.jobs)
    os.makedirs(args.out_dir, exist_ok=True)
    _dump(os.path.join(args.out_dir, "sweep.json"), res.to_dict())
    x = [r["k"] for r in res.records]
    m = np.array([r["mean"] for r in res.records])
    h = np.array([r["ci_half_width"] for r in res.records])
    viz.render_curve_svg({"accuracy": (x, m, m - h, m + h)}, os.path.join(args.out_dir, "sweep.svg"),
                         title="K sensitivity (95% t-interval)", xlabel="K", ylabel="accuracy")
    for r in res.records:
        print(f"k={r['k']} mean={r['mean']:.4f} ci=±{r['ci_half_width']:.4f} trials={r['trials']}")
    return EXIT_OK


def cmd_gen_planted(args):
    seed = 0 if args.seed is None else args.seed
    os.makedirs(args.out_dir, exist_ok=True)
    meta = {"num_classes": args.num_classes, "seq_len": args.seq_len,
            "signal_per_class": args.signal_per_class, "seed": seed}
    for split, n, offset in (("train", args.num_examples, 0), ("test", args.test_examples, 1)):
        if n <= 0:
            continue
        data, vocab = corpus.gen_planted(n, args.seq_len, args.num_classes, args.signal_per_class,
                                         args.distractors, [seed, offset])
        corpus.write_jsonl(os.path.join(args.out_dir, f"{split}.jsonl"), data, vocab)
        sig = corpus.planted_signal_ids(args.num_classes, args.signal_per_class)
        _dump(os.path.join(args.out_dir, f"{split}.planted.json"), {
            **meta, "split": split,
            "signal_tokens": {str(c): [vocab.tokens[i] for i in ids] for c, ids in sig.items()},
            "signal_positions": [e.signal_positions for e in data]})
    print(f"wrote planted dataset to {args.out_dir}")
    return EXIT_OK


def cmd_viz(args):
    os.makedirs(args.out_dir, exist_ok=True)
    if args.curve:
        with open(args.curve, encoding="utf-8") as fh:
            doc = json.load(fh)
        if "points" in doc:
            pts = np.array(doc["points"], dtype=float)
            series = {"accuracy": (pts[:, 0], pts[:, 1])}
        elif "records" in doc:
            x = [r["k"] for r in doc["records"]]
            m = np.array([r["mean"] for r in doc["records"]])
            h = np.array([r["ci_half_width"] for r in doc["records"]])
            series = {"accuracy": (x, m, m - h, m + h)}
        else:
            raise ConfigError(f"{args.curve}: neither a deletion curve nor a sweep result")
        out = os.path.join(args.out_dir, os.path.splitext(os.path.basename(args.curve))[0] + ".svg")
        viz.render_curve_svg(series, out)
        print(f"wrote {out}")
    if args.checkpoint:
        if not args.data:
            raise ConfigError("--data: required with --checkpoint")
        target, _ = checkpoint.load_models(args.checkpoint)
        cfg = _run_dir_config(args.checkpoint, args.config)
        vocab = _vocab_for(args.checkpoint, args.vocab)
        data = _load_data(cfg, vocab, args.data)[:args.count]
        _write_heatmaps(target, vocab, data, args.out_dir)
        if data:
            _, rows = evaluation.predict_all(target, data[:1])
            print(viz.attention_text([vocab.tokens[t] for t in data[0].token_ids], rows[0]), end="")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", default="runs/out")
    common.add_argument("--jobs", type=int, default=1)

    p = argparse.ArgumentParser(prog="afa", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common], help="train target + discriminator")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="metrics, deletion curve, heat maps")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--vocab")
    s.add_argument("--deletion", type=int, metavar="N_MAX")
    s.add_argument("--rerank", action="store_true", help="re-rank attention after each deletion")
    s.add_argument("--viz", type=int, default=0, metavar="E")
    s.add_argument("--planted-meta")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="K sensitivity with t-intervals")
    s.add_argument("--k-values", default="1,2,3,4,5")
    s.add_argument("--trials", type=int, default=5)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gen-planted", parents=[common], help="write a synthetic planted dataset")
    s.add_argument("--num-examples", type=int, default=2000)
    s.add_argument("--test-examples", type=int, default=500)
    s.add_argument("--seq-len", type=int, default=12)
    s.add_argument("--num-classes", type=int, default=2)
    s.add_argument("--signal-per-class", type=int, default=1)
    s.add_argument("--distractors", type=int, default=195)
    s.set_defaults(func=cmd_gen_planted)

    s = sub.add_parser("viz", parents=[common], help="heat maps from a checkpoint, SVG from results")
    s.add_argument("--checkpoint")
    s.add_argument("--data")
    s.add_argument("--vocab")
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--curve", help="deletion.json or sweep.json to plot")
    s.set_defaults(func=cmd_viz)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, corpus.DataError, checkpoint.CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
