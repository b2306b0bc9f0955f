"""Command-line entry point.

Subcommands: synth, train, eval, predict, assign, attribute.  A run's
effective configuration (config file merged with flag overrides) is
written to ``<out>/manifest.json`` together with its hash, the seed and
a git-describe string, so any run can be reproduced bit-exactly from its
manifest in single-threaded mode.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import subprocess
import sys

import numpy as np

from . import assignment, attribution, corpus, metrics, model as M, training
from .encoder import EncoderConfig, config_from_dict, config_to_dict

HEAD_CHOICES = ("charseq", "idm", "idm-ec", "cp", "cp-de")


class UsageError(ValueError):
    pass


def _git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def _write_manifest(out_dir, command, config):
    os.makedirs(out_dir, exist_ok=True)
    canonical = json.dumps(config, sort_keys=True, ensure_ascii=False)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "seed": config.get("seed"),
        "git_describe": _git_describe(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=2)
    return manifest


def _load_config_file(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a single JSON object")
    return doc


def _merged(args, keys, defaults):
    """File config overridden by explicitly-passed flags."""
    config = dict(defaults)
    config.update(_load_config_file(getattr(args, "config", None)))
    for key in keys:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            config[key] = val
    return config


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args):
    config = _merged(args, ["seed", "vocab_size", "classes", "topics",
                            "examples", "candidates", "groups"],
                     dict(seed=42, vocab_size=120, classes=4, topics=10,
                          examples=20000, candidates=7, groups=0))
    spec = corpus.SynthSpec(
        vocab_size=config["vocab_size"], n_classes=config["classes"],
        n_topics=config["topics"], n_examples=config["examples"],
        n_candidates=config["candidates"], seed=config["seed"])
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    world = corpus.SyntheticWorld(spec)
    examples = world.generate()
    train, dev, test = corpus.split_dataset(examples)
    _write_manifest(args.out, "synth", config)
    for name, part in (("train", train), ("dev", dev), ("test", test)):
        corpus.save_dataset(part, world.vocab, os.path.join(args.out, f"{name}.jsonl"))
    if config["groups"]:
        gex, groups = world.generate_groups(config["groups"])
        corpus.save_dataset(gex, world.vocab,
                            os.path.join(args.out, "groups_examples.jsonl"))
        corpus.save_groups(groups, world.vocab,
                           os.path.join(args.out, "groups.jsonl"))
    print(f"wrote {len(train)}/{len(dev)}/{len(test)} examples to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

ENCODER_DEFAULTS = dict(layers=2, heads=4, hidden_size=64, ffn_size=256,
                        max_positions=160, dropout=0.0)


def cmd_train(args):
    config = _merged(args, ["seed", "head", "data", "epochs", "lr",
                            "warmup_steps", "batch_size", "max_len"],
                     dict(seed=42, head="cp-de", epochs=20, lr=1e-3,
                          warmup_steps=100, batch_size=32, max_len=128,
                          weight_decay=0.01, encoder=dict(ENCODER_DEFAULTS)))
    if config["head"] not in HEAD_CHOICES:
        raise UsageError(f"invalid head {config['head']!r}")
    if "data" not in config:
        raise UsageError("no training data given (--data or config)")

    examples, idiom_vocab = corpus.load_dataset(config["data"])
    token_vocab = corpus.build_token_vocabulary(examples, idiom_vocab)
    enc_defaults = dict(ENCODER_DEFAULTS)
    enc_defaults.update(config.get("encoder", {}))
    enc_config = EncoderConfig(vocab_size=len(token_vocab), seed=config["seed"],
                               **enc_defaults)
    train_config = training.TrainConfig(
        head=config["head"], lr=config["lr"], warmup_steps=config["warmup_steps"],
        epochs=config["epochs"], batch_size=config["batch_size"],
        weight_decay=config["weight_decay"], seed=config["seed"],
        max_len=config["max_len"])

    start_model, start_step = None, 0
    if args.resume:
        start_model, start_step, _, token_vocab, idiom_vocab = \
            M.load_checkpoint(args.resume)
        enc_config = start_model.encoder_config

    _write_manifest(args.out, "train", config)
    mdl, log = training.fit(examples, token_vocab, idiom_vocab, enc_config,
                            train_config, start_model=start_model,
                            start_step=start_step)
    final_step = log.steps[-1]["step"] if log.steps else start_step
    M.save_checkpoint(os.path.join(args.out, "checkpoint.npz"), mdl, final_step,
                      training.train_config_to_dict(train_config),
                      token_vocab, idiom_vocab)
    with open(os.path.join(args.out, "train_log.json"), "w") as fh:
        json.dump(log.steps, fh)
    print(f"trained {final_step} steps; final loss "
          f"{log.steps[-1]['loss']:.4f}" if log.steps else "no steps run")
    return 0


# ---------------------------------------------------------------------------
# eval / predict
# ---------------------------------------------------------------------------

def _load_model_and_data(args):
    mdl, _, _, token_vocab, idiom_vocab = M.load_checkpoint(args.checkpoint)
    examples, _ = corpus.load_dataset(args.data, vocab=idiom_vocab)
    return mdl, token_vocab, idiom_vocab, examples


def cmd_eval(args):
    mdl, token_vocab, idiom_vocab, examples = _load_model_and_data(args)
    split = os.path.splitext(os.path.basename(args.data))[0]
    report = metrics.evaluate(mdl, examples, token_vocab, idiom_vocab, split=split)
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args.out, "eval",
                    dict(checkpoint=args.checkpoint, data=args.data, seed=None))
    report.to_json(os.path.join(args.out, "report.json"))
    print(report.render())
    return 0


def cmd_predict(args):
    mdl, token_vocab, idiom_vocab, examples = _load_model_and_data(args)
    char_table = (M.idiom_char_ids(idiom_vocab, token_vocab)
                  if mdl.head == "charseq" else None)
    max_len = M.window_budget(mdl.head, mdl.encoder_config.max_positions)
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args.out, "predict",
                    dict(checkpoint=args.checkpoint, data=args.data, seed=None))
    # batches need a uniform candidate count, which can vary across groups
    chunks = []
    for ex in examples:
        if (not chunks or len(chunks[-1]) == 64
                or len(chunks[-1][0].candidates) != len(ex.candidates)):
            chunks.append([])
        chunks[-1].append(ex)

    path = os.path.join(args.out, "predictions.jsonl")
    with M.frozen(mdl), open(path, "w", encoding="utf-8") as fh:
        for chunk in chunks:
            batch = M.make_batch(chunk, token_vocab, max_len=max_len, head=mdl.head)
            logits, _ = M.forward_logits(mdl, batch, ec=False,
                                         char_table=char_table,
                                         token_vocab=token_vocab)
            z = logits.data - logits.data.max(axis=1, keepdims=True)
            e = np.exp(z)
            probs = e / e.sum(axis=1, keepdims=True)
            for i, ex in enumerate(chunk):
                fh.write(json.dumps({
                    "id": ex.example_id,
                    "candidates": [idiom_vocab.surface(c) for c in ex.candidates],
                    "probs": [float(p) for p in probs[i]],
                }, ensure_ascii=False) + "\n")
    print(f"wrote predictions for {len(examples)} examples to {path}")
    return 0


# ---------------------------------------------------------------------------
# assign
# ---------------------------------------------------------------------------

def cmd_assign(args):
    vocab = corpus.IdiomVocabulary()
    groups = corpus.load_groups(args.groups, vocab)
    preds = {}
    with open(args.predictions, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rec = json.loads(line)
                preds[str(rec["id"])] = rec
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args.out, "assign",
                    dict(groups=args.groups, predictions=args.predictions,
                         seed=None))
    path = os.path.join(args.out, "choices.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for g in groups:
            surfaces = [vocab.surface(c) for c in g.candidates]
            rows = []
            for mid in g.member_ids:
                if mid not in preds:
                    raise UsageError(f"no prediction for group member {mid}")
                rec = preds[mid]
                if rec["candidates"] != surfaces:
                    raise UsageError(
                        f"member {mid} candidate list differs from group "
                        f"{g.group_id}")
                rows.append(rec["probs"])
            choices, loglik = assignment.decode_group(np.array(rows))
            fh.write(json.dumps({
                "group_id": g.group_id,
                "choices": {mid: surfaces[c]
                            for mid, c in zip(g.member_ids, choices)},
                "log_likelihood": loglik,
            }, ensure_ascii=False) + "\n")
    print(f"decoded {len(groups)} groups to {path}")
    return 0


# ---------------------------------------------------------------------------
# attribute
# ---------------------------------------------------------------------------

def cmd_attribute(args):
    mdl, token_vocab, idiom_vocab, examples = _load_model_and_data(args)
    by_id = {ex.example_id: ex for ex in examples}
    wanted = args.ids.split(",") if args.ids else [examples[0].example_id]
    char_table = (M.idiom_char_ids(idiom_vocab, token_vocab)
                  if mdl.head == "charseq" else None)
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args.out, "attribute",
                    dict(checkpoint=args.checkpoint, data=args.data,
                         ids=wanted, steps=args.steps, seed=None))
    for ex_id in wanted:
        if ex_id not in by_id:
            raise UsageError(f"example id {ex_id!r} not found in {args.data}")
        report = attribution.attribute_example(
            mdl, by_id[ex_id], token_vocab, steps=args.steps,
            char_table=char_table)
        with open(os.path.join(args.out, f"{ex_id}.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, ensure_ascii=False, indent=2)
        with open(os.path.join(args.out, f"{ex_id}.html"), "w",
                  encoding="utf-8") as fh:
            fh.write(attribution.render_report(report))
    print(f"wrote attribution reports for {len(wanted)} example(s) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="idiomcloze",
        description="Cloze-style idiom prediction laboratory")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p, need_out=True):
        p.add_argument("--config", help="JSON config file; flags override it")
        if need_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel evaluation workers (1 = deterministic)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--topics", type=int, default=None)
    p.add_argument("--examples", type=int, default=None)
    p.add_argument("--candidates", type=int, default=None)
    p.add_argument("--groups", type=int, default=None,
                   help="also emit this many candidate groups")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", help="training JSONL file")
    p.add_argument("--head", choices=HEAD_CHOICES, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--warmup-steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    for name, fn in (("eval", cmd_eval), ("predict", cmd_predict)):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("assign", help="group decoding via linear sum assignment")
    common(p)
    p.add_argument("--groups", required=True, help="group JSONL file")
    p.add_argument("--predictions", required=True,
                   help="per-blank distribution JSONL from `predict`")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("attribute", help="integrated-gradients heatmaps")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ids", help="comma-separated example ids")
    p.add_argument("--steps", type=int, default=50)
    p.set_defaults(func=cmd_attribute)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, corpus.DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
