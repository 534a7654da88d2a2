"""Command-line entry point: ``pag <command> ...``.

    pag train --config run.txt --out runs/a
    pag eval --checkpoint runs/a/checkpoint --data shapes-semantic:40:7 --out runs/a/eval
    pag compare --config compare.txt --out compare.csv
    pag ponder --checkpoint runs/a/checkpoint --image img.ptsr --out ponder.pgm
    pag pano-normals --in pano.ptsr --canonical-column 0 --out local.ptsr --ppm local.ppm

``PAG_SEED`` in the environment overrides the seed of any config file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fileio, pano
from .blocks import accumulate_ponder
from .data import KINDS, gen_dataset
from .model import ToyNet
from .train import (
    COMPARE_HEADER,
    compare_policies,
    eval_csv,
    evaluate,
    load_config,
    load_run,
    parse_compare_config,
    rows_to_csv,
    train,
)


def parse_data_spec(text: str, default_n: int, default_seed: int) -> tuple:
    """``KIND[:N[:SEED]]`` -> ``(kind, n, seed)``."""
    parts = text.split(":")
    if not 1 <= len(parts) <= 3 or parts[0] not in KINDS:
        raise ValueError(f"data spec must look like KIND[:N[:SEED]] with KIND in {KINDS}")
    n = int(parts[1]) if len(parts) > 1 else default_n
    seed = int(parts[2]) if len(parts) > 2 else default_seed
    return parts[0], n, seed


def _checkpoint_dir(path) -> Path:
    p = Path(path)
    if not (p / fileio.MANIFEST).exists() and (p / "checkpoint" / fileio.MANIFEST).exists():
        return p / "checkpoint"
    return p


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = train(cfg, out_dir=args.out)
    print(f"trained {cfg.policy} on {cfg.task}: {len(result.rows)} steps, "
          f"final density {result.train_density:.4f} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    params, net, run = load_run(_checkpoint_dir(args.checkpoint))
    kind, n, seed = parse_data_spec(args.data, run.n_eval, run.seed)
    if kind != net.task:
        raise ValueError(f"checkpoint was trained on {net.task}, data is {kind}")
    data = gen_dataset(kind, run.image_size, n, seed, "eval")
    result = evaluate(params, net, data, out_dir=args.out, rho=run.rho)
    sys.stdout.write(eval_csv(result))
    return 0


def cmd_compare(args) -> int:
    template, spec = parse_compare_config(Path(args.config).read_text())
    rows = compare_policies(template, spec.budgets, spec.policies, spec.seeds or None,
                            log=lambda msg: print(msg, file=sys.stderr))
    text = rows_to_csv(rows, COMPARE_HEADER)
    Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_ponder(args) -> int:
    params, net, _ = load_run(_checkpoint_dir(args.checkpoint))
    image = fileio.read_ptsr(args.image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"image must be 3xHxW, got {image.shape}")
    out = ToyNet(net).forward(params, image, rng=None, training=False)
    if not out.masks:
        raise ValueError("checkpoint has no gated blocks, so there is no ponder map")
    hw = (image.shape[1] // 2, image.shape[2] // 2)
    ponder = accumulate_ponder([np.broadcast_to(m.data, hw) for m in out.masks])
    fileio.write_pgm(args.out, fileio.ponder_image(ponder.values, ponder.layer_count))
    return 0


def cmd_pano(args) -> int:
    normals = fileio.read_ptsr(getattr(args, "in"))
    local = pano.globals_to_locals(normals, args.canonical_column)
    fileio.write_ptsr(args.out, local)
    if args.ppm:
        fileio.write_ppm(args.ppm, pano.false_color(local))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the staged training recipe")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-noise inference, metrics and images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="KIND[:N[:SEED]], eval split")
    p.add_argument("--out", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="policies x budgets x seeds table")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="compare.csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ponder", help="ponder map of one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="3xHxW PTSR")
    p.add_argument("--out", required=True, help="PGM path")
    p.set_defaults(func=cmd_ponder)

    p = sub.add_parser("pano-normals", help="panorama normals to camera frame")
    p.add_argument("--in", required=True, help="3xHxW PTSR")
    p.add_argument("--canonical-column", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ppm", help="optional false-colour PPM path")
    p.set_defaults(func=cmd_pano)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"pag {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
