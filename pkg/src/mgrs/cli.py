"""Command-line entry point: ``mgrs <subcommand> ...`` or ``python -m mgrs``.

Exit codes: 0 success, 1 usage/contract/format error, 2 verification failure.
The only environment variable read is ``MGRS_THREADS`` (evaluation threads);
it never changes results.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import TrainConfig, apply_overrides, load_config, save_config
from .data import load_dataset, write_dataset
from .errors import MgrsError
from .evaluation import evaluate_set, restore_image
from .imageio import read_image, write_image, write_mask
from .masking import DEFAULT_TAU
from .train import (TrainLog, mask_net_from_checkpoint, restore_nets_from_checkpoint,
                    train_mask_stage, train_restore_stage)
from .verification import all_passed, gradcheck_suite

EXIT_OK, EXIT_ERROR, EXIT_VERIFY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--train-dir")
    p.add_argument("--test-dir")
    p.add_argument("--out-dir")
    p.add_argument("--resume", help="checkpoint to continue from")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mgrs", description="Mask-guided restoration with attentive distillation.")
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("gen-data", help="write synthetic degraded/clean/mask triples")
    p.add_argument("--out", default="data")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--count", type=int, default=128, help="training triples")
    p.add_argument("--test-count", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--kind", choices=("rain", "blur"), default="rain")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)

    p = sub.add_parser("train-mask", help="stage 1: train the mask predictor")
    _config_args(p)

    p = sub.add_parser("train-restore", help="stage 2: train the restoration network")
    _config_args(p)
    p.add_argument("--mask-ckpt", help="stage-1 checkpoint (default <out_dir>/mask.ckpt)")

    for name, helptext in (("infer", "restore images and write predicted masks"),
                           ("eval", "PSNR/SSIM/IoU report over a test directory")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--mask-ckpt", required=True)
        p.add_argument("--restore-ckpt", required=True)
        if name == "infer":
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("images", nargs="+")
        else:
            p.add_argument("--test-dir", required=True)
            p.add_argument("--report", help="CSV path (default: stdout summary only)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _parse_set(items) -> dict:
    pairs = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v
    return pairs


def resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    cfg = apply_overrides(cfg, _parse_set(args.set))
    flags = {"seed": args.seed, "epochs": args.epochs, "train_dir": args.train_dir,
             "test_dir": args.test_dir, "out_dir": args.out_dir}
    return cfg.replace(**{k: v for k, v in flags.items() if v is not None}).validate()


def _resume(args, stage: str, cfg: TrainConfig):
    if not args.resume:
        return None
    ck = load_checkpoint(args.resume)
    out = Path(cfg.out_dir)
    log_path, dist_path = out / f"{stage}_log.csv", out / f"{stage}_distill.csv"
    if log_path.exists():
        prev = TrainLog.from_csv(stage, log_path.read_text(),
                                 dist_path.read_text() if dist_path.exists() else "")
        prev.records = [r for r in prev.records if r.epoch <= ck.epoch]
        prev.distill_rows = [r for r in prev.distill_rows if r[0] <= ck.epoch]
        ck.extra["log"] = prev
    return ck


def cmd_gen_data(args) -> int:
    out = write_dataset(args.out, args.seed, args.count, args.test_count,
                        size=args.size, kind=args.kind, tau=args.tau)
    print(f"wrote {len(out['train'])} train / {len(out['test'])} test triples to {args.out}")
    return EXIT_OK


def cmd_train_mask(args) -> int:
    cfg = resolve_config(args)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    save_config(cfg, Path(cfg.out_dir) / "mask_config.txt")
    ck, log_ = train_mask_stage(cfg, resume=_resume(args, "mask", cfg))
    last = log_.records[-1] if log_.records else None
    print(f"mask stage done: epoch {ck.epoch}, test IoU {last.iou:.4f}" if last else "nothing to do")
    return EXIT_OK


def cmd_train_restore(args) -> int:
    cfg = resolve_config(args)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    save_config(cfg, Path(cfg.out_dir) / "restore_config.txt")
    mask_ckpt = args.mask_ckpt or str(Path(cfg.out_dir) / "mask.ckpt")
    ck, log_ = train_restore_stage(cfg, mask_ckpt, resume=_resume(args, "restore", cfg))
    last = log_.records[-1] if log_.records else None
    print(f"restore stage done: epoch {ck.epoch}, test PSNR {last.psnr:.3f} dB" if last else "nothing to do")
    return EXIT_OK


def _load_nets(args):
    mask_net = mask_net_from_checkpoint(load_checkpoint(args.mask_ckpt))
    restore_net, _ = restore_nets_from_checkpoint(load_checkpoint(args.restore_ckpt))
    return mask_net, restore_net


def cmd_infer(args) -> int:
    mask_net, restore_net = _load_nets(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.images:
        restored, mask = restore_image(restore_net, mask_net, read_image(path))
        stem = Path(path).stem
        write_image(out / f"{stem}_restored.ppm", restored)
        write_mask(out / f"{stem}_mask.ppm", mask)
        print(f"{path} -> {out / (stem + '_restored.ppm')}")
    return EXIT_OK


def _threads() -> int:
    raw = os.environ.get("MGRS_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def cmd_eval(args) -> int:
    mask_net, restore_net = _load_nets(args)
    test_set = load_dataset(args.test_dir, tolerant=True)
    report = evaluate_set(restore_net, mask_net, test_set, threads=_threads())
    if args.report:
        Path(args.report).write_text(report.to_csv())
    print(report.summary())
    return EXIT_OK if report.rows else EXIT_ERROR


def cmd_gradcheck(args) -> int:
    results = gradcheck_suite(args.seed)
    for name, rep in results:
        print(f"{'PASS' if rep.passed else 'FAIL'}  {name:<24} {rep}")
    ok = all_passed(results)
    print("all gradients verified" if ok else "gradient verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"gen-data": cmd_gen_data, "train-mask": cmd_train_mask,
            "train-restore": cmd_train_restore, "infer": cmd_infer, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck}


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:   # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    except (MgrsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(run_cli())
