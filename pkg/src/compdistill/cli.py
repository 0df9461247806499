"""Command line entry point: ``compdistill {train,compare,gradcheck,inspect}``.

Exit codes: 0 ok, 2 config error, 3 data-format error, 4 divergence,
5 gradcheck failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import gradcheck
from .cohort import train
from .config import load_config, load_datasets
from .errors import CompDistillError, GradcheckError
from .experiment import compare, format_table, comparison_rows, write_atomic
from .nn import load_checkpoint


def _output_dir(cfg, config_path):
    if cfg.output_dir:
        return cfg.output_dir
    stem = os.path.splitext(os.path.basename(config_path))[0]
    return os.path.join("runs", stem)


def cmd_train(config_path) -> int:
    cfg = load_config(config_path)
    train_ds, test_ds = load_datasets(cfg.dataset)
    out = _output_dir(cfg, config_path)
    report = train(cfg, train_ds, test_ds, output_dir=out, keep_steps=False)
    write_atomic(os.path.join(out, "report.json"), json.dumps(report.to_dict(), indent=2))
    print(f"{cfg.strategy}: final accuracy per net {['%.2f' % a for a in report.final_acc]}, "
          f"teacher switches {report.teacher_switches}, output in {out}")
    return 0


def cmd_compare(config_path) -> int:
    cfg = load_config(config_path)
    train_ds, test_ds = load_datasets(cfg.dataset)
    out = _output_dir(cfg, config_path)
    reports = compare(cfg, train_ds, test_ds, output_dir=out)
    print(format_table(comparison_rows(reports, list(cfg.strategies))), end="")
    return 0


def cmd_gradcheck(seed: int = 0, backward_fn=None) -> int:
    results = gradcheck.run_gradcheck(seed, backward_fn=backward_fn)
    for name, err in results.items():
        status = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{name}: max relative error {err:.3e} [{status}]")
    bad = gradcheck.failing(results)
    if bad:
        raise GradcheckError(f"gradient check failed for: {', '.join(bad)}")
    return 0


def cmd_inspect(checkpoint_path) -> int:
    nets, manifest = load_checkpoint(checkpoint_path)
    print(f"format_version: {manifest['format_version']}")
    for key, val in sorted(manifest.get("extra", {}).items()):
        print(f"{key}: {val}")
    for net in nets:
        a = net.arch
        print(f"net {net.net_id}: {a.kind} input={a.input_shape} hidden={a.hidden} classes={a.num_classes} "
              f"feature_layer={a.feature_index} params={net.num_params} "
              f"norm={float(np.sqrt(sum(np.sum(p * p) for p in net.params))):.4f}")
        for k, p in enumerate(net.params):
            print(f"  param{k}: shape={list(p.shape)}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="compdistill", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train one cohort with the configured strategy")
    p.add_argument("config")
    p = sub.add_parser("compare", help="run several strategies on identical batches")
    p.add_argument("config")
    p = sub.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("inspect", help="summarise a checkpoint file")
    p.add_argument("checkpoint")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args.config)
        if args.command == "compare":
            return cmd_compare(args.config)
        if args.command == "gradcheck":
            return cmd_gradcheck(args.seed)
        return cmd_inspect(args.checkpoint)
    except CompDistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
