"""Command line entry point: ``spectra-ca run`` and ``spectra-ca inspect``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from ..errors import SpectraError
from .checkpoint import load_checkpoint
from .config import load_config
from .experiments import default_out_dir, run


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = args.out or default_out_dir(cfg)
    record = run(cfg, out, force=args.force, resume=args.resume,
                 base_dir=os.path.dirname(os.path.abspath(args.config)))
    last = record.rows[-1]
    summary = ", ".join(f"{k}={v:.6g}" for k, v in last.items()
                        if k != "epoch" and isinstance(v, float))
    print(f"{cfg.experiment} seed {cfg.seed}: {int(last['epoch'])} epochs -> {out}")
    if summary:
        print(f"  final: {summary}")
    return 0


def _inspect(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    print(f"epoch: {ck.epoch}")
    print(f"experiment: {ck.meta.get('experiment', '?')}")
    for key, value in sorted(ck.meta.items()):
        if key not in ("experiment", "columns", "spectrum"):
            print(f"{key}: {value}")
    print(f"tensors: {len(ck.tensors)}")
    for name, arr in ck.tensors.items():
        if name.startswith("record/"):
            continue
        print(f"  {name:40s} {str(arr.shape):16s} |x|={np.linalg.norm(arr):.6g}")
    print("config:")
    for line in ck.config_text.splitlines():
        print(f"  {line}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectra-ca", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the experiment described by a config file")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (default: $SPECTRA_CA_OUT/<experiment>-seed<N>)")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint of this config")
    p.set_defaults(func=_run)
    p = sub.add_parser("inspect", help="summarise a checkpoint file")
    p.add_argument("checkpoint")
    p.set_defaults(func=_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpectraError, OSError) as exc:
        print(f"spectra-ca: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
