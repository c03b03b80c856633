"""Command-line surface: synth, train, predict, eval, inspect.

Configs are layered defaults < config file < environment < flags, and every
run echoes its fully resolved configuration.  The config file is JSON; the
MIXSEG_CONFIG environment variable names a default config path, and any
hyperparameter can be overridden with MIXSEG_<NAME> (e.g. MIXSEG_EPOCHS=5).

Exit codes: 0 success, 1 usage error, 2 data validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from mixseg.core import PATTERNS, Hyperparameters, extract_boundaries, validate_record
from mixseg.baselines import HmmParams, MemmParams
from mixseg.data_io import (
    EMBED_MAGIC,
    MODEL_MAGIC,
    SynthConfig,
    load_dataset,
    load_model,
    read_embeddings,
    save_dataset,
    save_model,
    synth_generate,
    write_embeddings,
)
from mixseg.emissions import DropoutPolicy, EmbeddingTable, lookup_embeddings
from mixseg.metrics import Prediction, evaluate, format_report, report_to_kv
from mixseg.training import (
    BaselinePipeline,
    SegmenterModel,
    TrainConfig,
    build_llrd_groups,
    fit_baseline_pipeline,
    predict_one,
    predict_one_pipeline,
    train,
)

ENV_PREFIX = "MIXSEG_"

# name -> (parser from string, default) for every layered setting
_CONFIG_SCHEMA = {
    "batch_size": (int, 32),
    "epochs": (int, 3),
    "gradient_clip": (float, 1.0),
    "hidden_dim": (int, 512),
    "num_layers": (int, 3),
    "num_labels": (int, 2),
    "weight_decay": (float, 1e-2),
    "max_len": (int, 512),
    "llrd_rates": (lambda s: tuple(float(v) for v in str(s).split(",")),
                   (1e-6, 5e-6, 1e-5, 1e-4)),
    "seed": (int, 0),
    "dropout_min": (float, 0.0),
    "dropout_max": (float, 0.0),
    "dropout_mode": (str, "off"),
    "init_scheme": (str, "xavier"),
    "use_llrd": (lambda s: str(s).lower() in ("1", "true", "yes"), True),
    "optimizer": (str, "adamw"),
}


class _Parser(argparse.ArgumentParser):
    """argparse, but usage problems exit 1 per the exit-code contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_hyper_flags(sub):
    sub.add_argument("--config", help="JSON config file (MIXSEG_CONFIG names a default)")
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--gradient-clip", type=float, dest="gradient_clip")
    sub.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    sub.add_argument("--num-layers", type=int, dest="num_layers")
    sub.add_argument("--num-labels", type=int, dest="num_labels")
    sub.add_argument("--weight-decay", type=float, dest="weight_decay")
    sub.add_argument("--max-len", type=int, dest="max_len")
    sub.add_argument("--llrd-rates", dest="llrd_rates",
                     help="comma-separated, input-side to output-side")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--dropout-min", type=float, dest="dropout_min")
    sub.add_argument("--dropout-max", type=float, dest="dropout_max")
    sub.add_argument("--dropout-mode", dest="dropout_mode",
                     choices=["off", "per-layer-linear"])
    sub.add_argument("--init-scheme", dest="init_scheme", choices=["xavier", "normal"])
    sub.add_argument("--no-llrd", dest="use_llrd", action="store_false", default=None)
    sub.add_argument("--optimizer", choices=["adamw", "sgd"])


def _resolve_config(args) -> dict:
    """defaults < config file < environment < flags; echoes the result."""
    resolved = {name: default for name, (_, default) in _CONFIG_SCHEMA.items()}

    config_path = getattr(args, "config", None) or os.environ.get(ENV_PREFIX + "CONFIG")
    if config_path:
        with open(config_path, "r", encoding="utf-8") as f:
            file_cfg = json.load(f)
        for name, value in file_cfg.items():
            if name not in _CONFIG_SCHEMA:
                raise ValueError(f"config file: unknown setting {name!r}")
            parse, _ = _CONFIG_SCHEMA[name]
            resolved[name] = parse(value) if isinstance(value, str) else (
                tuple(value) if name == "llrd_rates" else value)

    for name, (parse, _) in _CONFIG_SCHEMA.items():
        env_val = os.environ.get(ENV_PREFIX + name.upper())
        if env_val is not None:
            resolved[name] = parse(env_val)

    for name, (parse, _) in _CONFIG_SCHEMA.items():
        flag_val = getattr(args, name, None)
        if flag_val is not None:
            resolved[name] = parse(flag_val) if isinstance(flag_val, str) else flag_val

    echo = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(resolved.items())}
    print("config: " + json.dumps(echo, sort_keys=True))
    return resolved


def _train_config(resolved: dict) -> TrainConfig:
    hyper = Hyperparameters(
        batch_size=resolved["batch_size"], epochs=resolved["epochs"],
        gradient_clip=resolved["gradient_clip"], hidden_dim=resolved["hidden_dim"],
        num_layers=resolved["num_layers"], num_labels=resolved["num_labels"],
        weight_decay=resolved["weight_decay"], max_len=resolved["max_len"],
        llrd_rates=resolved["llrd_rates"])
    dropout = DropoutPolicy(resolved["dropout_min"], resolved["dropout_max"],
                            mode=resolved["dropout_mode"], seed=resolved["seed"])
    return TrainConfig(hyper=hyper, seed=resolved["seed"], dropout=dropout,
                       init_scheme=resolved["init_scheme"],
                       use_llrd=resolved["use_llrd"], optimizer=resolved["optimizer"])


def _pair_with_embeddings(records, embeddings_path, hashed_dim, hash_seed, max_len):
    """(record, float64 matrix) pairs from an embedding file or hashed table."""
    pairs = []
    if embeddings_path:
        seqs = read_embeddings(embeddings_path)
        for rec in records:
            key = rec.embedding_key or rec.id
            if key not in seqs:
                raise ValueError(f"record {rec.id}: no embeddings under key {key!r}")
            mat = seqs[key].astype(np.float64)
            if mat.shape[0] != len(rec.tokens):
                raise ValueError(f"record {rec.id}: {mat.shape[0]} embedding rows "
                                 f"for {len(rec.tokens)} tokens")
            pairs.append((rec, mat))
    else:
        table = EmbeddingTable(dim=hashed_dim, seed=hash_seed)
        for rec in records:
            pairs.append((rec, lookup_embeddings(rec.tokens, table)))
    return pairs


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def run_synth(args) -> int:
    out_dir = Path(args.out)
    if not out_dir.is_dir():
        print(f"error: output directory {out_dir} does not exist", file=sys.stderr)
        return 2
    weights = {}
    if args.pattern:
        for name in args.pattern.split(","):
            if name not in PATTERNS:
                raise ValueError(f"unknown pattern {name!r} (choose from "
                                 f"{', '.join(PATTERNS)})")
            weights[name] = 1.0
    else:
        weights = {p: 1.0 for p in PATTERNS}
    lo, hi = (int(v) for v in args.length_range.split(","))
    cfg = SynthConfig(seed=args.seed, num_records=args.n, pattern_weights=weights,
                      length_range=(lo, hi), min_segment=args.min_segment,
                      delta=args.delta, embed_dim=args.embed_dim)
    print("config: " + json.dumps({
        "seed": cfg.seed, "num_records": cfg.num_records,
        "patterns": sorted(weights), "length_range": [lo, hi],
        "min_segment": cfg.min_segment, "delta": cfg.delta,
        "embed_dim": cfg.embed_dim}, sort_keys=True))
    records, embeddings = synth_generate(cfg)
    save_dataset(records, out_dir / "dataset.jsonl")
    write_embeddings(out_dir / "embeddings.seqe", embeddings)
    print(f"wrote {len(records)} records to {out_dir / 'dataset.jsonl'}")
    print(f"wrote embeddings ({cfg.embed_dim}-dim) to {out_dir / 'embeddings.seqe'}")
    return 0


def run_train(args) -> int:
    resolved = _resolve_config(args)
    config = _train_config(resolved)

    records = load_dataset(args.train, max_len=config.hyper.max_len)
    problems = []
    for rec in records:
        for issue in validate_record(rec, max_len=config.hyper.max_len):
            problems.append(f"record {rec.id}: {issue}")
    if problems:
        for p in problems:
            print(f"validation: {p}", file=sys.stderr)
        return 2
    train_data = _pair_with_embeddings(records, args.embeddings, args.hashed_dim,
                                       resolved["seed"], config.hyper.max_len)
    dev_data = []
    if args.dev:
        dev_records = load_dataset(args.dev, max_len=config.hyper.max_len)
        dev_data = _pair_with_embeddings(dev_records, args.embeddings,
                                         args.hashed_dim, resolved["seed"],
                                         config.hyper.max_len)

    model, _ = train(train_data, dev_data, config, log_path=args.log)
    if args.model == "crf":
        save_model(model, args.out)
    else:
        pipeline = fit_baseline_pipeline(model, train_data, args.model)
        save_model(pipeline, args.out)
    print(f"wrote model ({args.model}) to {args.out}")
    return 0


def run_predict(args) -> int:
    model = load_model(args.model)
    records = load_dataset(args.data)
    if isinstance(model, (HmmParams, MemmParams)):
        raise ValueError("bare HMM/MEMM parameters cannot embed tokens; "
                         "predict expects a crf model or an hmm/memm pipeline")
    backbone = model.backbone if isinstance(model, BaselinePipeline) else model
    pairs = _pair_with_embeddings(records, args.embeddings, backbone.bigru.input_dim,
                                  args.seed, max_len=512)
    for rec, mat in pairs:
        if mat.shape[1] != backbone.bigru.input_dim:
            raise ValueError(f"record {rec.id}: embedding dim {mat.shape[1]} does not "
                             f"match model input dim {backbone.bigru.input_dim}")

    lines = []
    for rec, mat in pairs:
        if isinstance(model, BaselinePipeline):
            pred = predict_one_pipeline(model, mat, k=args.k)
        else:
            pred = predict_one(model, mat, k=args.k)
        lines.append(json.dumps({
            "id": rec.id,
            "labels": list(pred.labels),
            "boundaries": list(extract_boundaries(pred.labels)) if pred.labels else [],
            "top_k": [{"index": int(i), "confidence": float(c)}
                      for i, c in zip(pred.top_k, pred.confidences)],
        }, sort_keys=True, separators=(",", ":")))
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote {len(lines)} predictions to {args.out}")
    return 0


def run_eval(args) -> int:
    records = load_dataset(args.data)
    by_id = {}
    with open(args.predictions, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"predictions line {line_no}: malformed ({exc})") from exc
            by_id[obj["id"]] = obj

    def predict(rec):
        if rec.id not in by_id:
            raise ValueError(f"no prediction for record {rec.id}")
        obj = by_id[rec.id]
        top = [t["index"] for t in obj.get("top_k", [])]
        conf = [t["confidence"] for t in obj.get("top_k", [])]
        return Prediction(list(obj["labels"]), tuple(top), tuple(conf))

    report = evaluate(predict, records, k=args.k)
    text = format_report(report)
    print(text, end="")
    if args.out_prefix:
        Path(str(args.out_prefix) + ".txt").write_text(text, encoding="utf-8")
        Path(str(args.out_prefix) + ".kv").write_text(report_to_kv(report),
                                                      encoding="utf-8")
        print(f"wrote {args.out_prefix}.txt and {args.out_prefix}.kv")
    return 0


def run_inspect(args) -> int:
    path = Path(args.path)
    magic = path.open("rb").read(4)
    if magic == MODEL_MAGIC:
        model = load_model(path)
        if isinstance(model, BaselinePipeline):
            print(f"model: {model.decoder_kind} pipeline over a BiGRU backbone")
            _print_group_counts(model.backbone)
        elif isinstance(model, SegmenterModel):
            print("model: BiGRU + CRF segmenter")
            _print_group_counts(model)
        elif isinstance(model, HmmParams):
            print(f"model: HMM ({model.num_labels} labels, "
                  f"{type(model.emissions).__name__})")
        else:
            print(f"model: MEMM ({model.num_labels} labels)")
    elif magic == EMBED_MAGIC:
        seqs = read_embeddings(path)
        dims = {v.shape[1] for v in seqs.values()}
        rows = sum(v.shape[0] for v in seqs.values())
        lo = min(float(v.min()) for v in seqs.values())
        hi = max(float(v.max()) for v in seqs.values())
        print(f"embeddings: {len(seqs)} sequences, dim {dims.pop()}, {rows} rows, "
              f"values in [{lo:.4f}, {hi:.4f}]")
    else:
        records = load_dataset(path)
        pat_hist: dict[str, int] = {}
        bry_hist: dict[int, int] = {}
        for rec in records:
            pat_hist[rec.pattern] = pat_hist.get(rec.pattern, 0) + 1
            b = len(extract_boundaries(rec.gold_labels))
            bry_hist[b] = bry_hist.get(b, 0) + 1
        n_tok = sum(len(r.tokens) for r in records)
        print(f"dataset: {len(records)} records, {n_tok} tokens")
        print("pattern histogram: " +
              ", ".join(f"{p}={pat_hist[p]}" for p in sorted(pat_hist)))
        print("boundary-count histogram: " +
              ", ".join(f"{k}={bry_hist[k]}" for k in sorted(bry_hist)))
    return 0


def _print_group_counts(model: SegmenterModel):
    sizes = dict(model.named_arrays())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        groups = build_llrd_groups(model, Hyperparameters().llrd_rates)
    total = 0
    for g in groups:
        count = sum(sizes[n].size for n in g.param_names)
        total += count
        print(f"  {g.group_id:<18} lr={g.learning_rate:<8g} params={count}")
    print(f"  total parameters: {total}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="mixseg",
                     description="Token-level segmentation of mixed human/AI text")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=100, help="number of records")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--pattern", help="comma-separated pattern subset (default: all six)")
    p.add_argument("--length-range", default="60,120")
    p.add_argument("--min-segment", type=int, default=5)
    p.add_argument("--delta", type=float, default=3.0)
    p.add_argument("--embed-dim", type=int, default=8)
    p.set_defaults(func=run_synth)

    p = sub.add_parser("train", help="train a segmenter")
    p.add_argument("--train", required=True, help="training dataset (jsonl)")
    p.add_argument("--dev", help="dev dataset for per-epoch accuracy")
    p.add_argument("--embeddings", help="embedding file; omit to use hashed vectors")
    p.add_argument("--hashed-dim", type=int, default=64)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--log", help="epoch log file")
    p.add_argument("--model", choices=["crf", "hmm", "memm"], default="crf",
                   help="decoder family")
    _add_hyper_flags(p)
    p.set_defaults(func=run_train)

    p = sub.add_parser("predict", help="decode a dataset with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0, help="hashed-table seed fallback")
    p.set_defaults(func=run_predict)

    p = sub.add_parser("eval", help="score predictions against gold labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--data", required=True, help="gold dataset")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out-prefix", help="write PREFIX.txt and PREFIX.kv reports")
    p.set_defaults(func=run_eval)

    p = sub.add_parser("inspect", help="summarize a model/dataset/embedding file")
    p.add_argument("path")
    p.set_defaults(func=run_inspect)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run())
