"""Command-line entry point: ``protogcn {synth,train,eval,gradcheck,viz}``.

Exit codes: 0 success, 1 validation error, 2 numeric failure, 3 audit failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .audit import AuditReport
from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .skeleton import SkeletonFormatError, export_csv, load_dataset, save_dataset, split, synth_generate
from .tensor import NumericError
from .trainer import GRADCHECK_CONFIG, NumericFailure, evaluate, gradcheck, load_model, stream_arrays, train
from .viz import export_topology

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_AUDIT = 0, 1, 2, 3

log = logging.getLogger("protogcn")


def cmd_synth(args):
    cfg = load_config(args.config, args.set)
    s = cfg.synth
    data = synth_generate(s.seed, s.classes, s.per_class, s.joints, s.frames, s.similarity, s.noise, s.subjects)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(args.out, data)
    if args.csv_dir:
        export_csv(data, args.csv_dir)
    print(f"wrote {len(data)} sequences ({s.classes} classes, shape {data.shape}) to {args.out}")
    return EXIT_OK


def cmd_train(args):
    overrides = list(args.set)
    if args.out_dir:
        overrides.append(f"out_dir={json.dumps(args.out_dir)}")
    if args.data:
        overrides.append(f"data={json.dumps(args.data)}")
    cfg = load_config(args.config, overrides)
    _, metrics = train(cfg)
    last = metrics[-1]
    best = max(m["test_top1"] for m in metrics)
    print(
        f"trained {len(metrics)} epochs: train_top1={last['train_top1']:.4f} "
        f"test_top1={last['test_top1']:.4f} best_test_top1={best:.4f} -> {cfg.out_dir}"
    )
    return EXIT_OK


def cmd_eval(args):
    data = load_dataset(args.data)
    if args.split != "all":
        _, meta_cfg, _, _ = load_model(args.checkpoints[0])
        train_set, test_set = split(data, meta_cfg.split_ratio, meta_cfg.by_subject, meta_cfg.split_seed)
        data = test_set if args.split == "test" else train_set
    result = evaluate(args.checkpoints, data, args.streams)
    for s in result["streams"]:
        print(f"stream {s['stream']:<12} top1={s['top1']:.4f} top5={s['top5']:.4f}  {s['checkpoint']}")
    print(f"fused ({len(args.checkpoints)} streams) top1={result['fused']['top1']:.4f} top5={result['fused']['top5']:.4f}")
    if args.json:
        payload = {k: v for k, v in result.items() if k != "scores"}
        Path(args.json).write_text(json.dumps(payload, indent=2))
    return EXIT_OK


def cmd_gradcheck(args):
    model_cfg = GRADCHECK_CONFIG
    if args.config or args.set:
        model_cfg = load_config(args.config, args.set).model
    report: AuditReport = gradcheck(
        model_cfg, batch=args.batch, frames=args.frames, lam=args.lam, eps=args.eps,
        max_checks=args.max_checks, seed=args.seed,
    )
    for line in report.lines():
        print(line)
    ok = report.passed(args.tol)
    print(f"max relative error {report.max_rel_err:.3e} (tolerance {args.tol:g}): {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_viz(args):
    model, cfg, _, _ = load_model(args.checkpoint)
    data = load_dataset(args.data)
    if not 0 <= args.index < len(data):
        raise ConfigError(f"sequence index {args.index} outside [0, {len(data)})")
    x, _ = stream_arrays(data, cfg.stream)
    mat = export_topology(model, x[args.index], args.out_dir, args.stem)
    print(f"wrote {args.stem}.pgm/.csv ({mat.shape[0]}x{mat.shape[1]}) and W_memory dumps to {args.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="protogcn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. model.widths=[8,16]")

    sp = sub.add_parser("synth", help="generate a synthetic .skel dataset")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv-dir", help="also export one CSV per sequence")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train one stream")
    with_config(sp)
    sp.add_argument("--data", help=".skel dataset (default: synthetic from config)")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate and fuse stream checkpoints")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoints", nargs="+", required=True)
    sp.add_argument("--streams", nargs="+", help="modality per checkpoint (default: from checkpoint)")
    sp.add_argument("--split", choices=("test", "train", "all"), default="test")
    sp.add_argument("--json", help="write the result summary here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference audit of every parameter")
    with_config(sp)
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--lam", type=float, default=0.3)
    sp.add_argument("--batch", type=int, default=2)
    sp.add_argument("--frames", type=int, default=8)
    sp.add_argument("--max-checks", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("viz", help="export the final-layer topology heatmap")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--stem", default="topology")
    sp.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (NumericFailure, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SkeletonFormatError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
