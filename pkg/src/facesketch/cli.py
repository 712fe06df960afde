"""Command-line entry points: ``fixtures``, ``train``, ``infer``, ``eval``.

Exit codes: 0 on success, 1 for usage or data errors, 2 when training hits a
non-finite loss.  Errors print one diagnostic line to stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import torch

from . import dataio, metrics, trainer
from .config import TrainConfig, config_digest, config_text, load_config
from .errors import BadShape, FaceSketchError, NonFinite
from .generator import generate


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _run_dir(base, config):
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = Path(base) / f"{config_digest(config)}-{stamp}"
    n = 1
    while path.exists():
        path = Path(base) / f"{config_digest(config)}-{stamp}-{n}"
        n += 1
    return path


def cmd_fixtures(args):
    for split, offset in (("train", 0), ("test", 1)):
        samples = dataio.make_fixture(args.seed + offset, args.n, args.size or 256)
        dataio.write_dataset(samples, args.out, split, args.parser, raw_geometry=args.size is None)
    print(args.out)
    return 0


def cmd_train(args):
    config = load_config(args.config) if args.config else TrainConfig()
    if args.print_config:
        sys.stdout.write(config_text(config))
        return 0
    if not config.data_root:
        raise UsageError("config has no data.root")
    manifest = dataio.load_manifest(config.data_root, config.data_split)
    state = trainer.load_checkpoint(args.resume, config) if args.resume else None
    out = _run_dir(args.out, config)
    out.mkdir(parents=True)
    (out / "config.txt").write_text(config_text(config))
    state = trainer.fit(manifest, config, sink=out, state=state)
    print(out)
    return 0


def cmd_infer(args):
    state = trainer.load_checkpoint(args.checkpoint)
    gen = state.generator.eval()
    parser = args.parser or state.config.parser
    entries = dataio.scan_split_dir(args.input_dir, require_sketch=False)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    size = gen.config.image_size
    for entry in entries:
        sample = dataio.load_sample(entry, parser)
        if tuple(sample.size) != (size, size):
            raise BadShape(
                f"sample '{entry.id}': {sample.size[1]}x{sample.size[0]} input for a {size}x{size} model")
        with torch.no_grad():
            sketch = generate(gen, sample.photo, sample.saliency, sample.layout)
        dataio.write_gray(out / f"{entry.id}.png", sketch.numpy())
    print(f"{len(entries)} sketches written to {out}")
    return 0


def cmd_eval(args):
    crop = None if args.no_crop else dataio.CUFS_PAD
    report = metrics.evaluate_dirs(args.pred_dir, args.target_dir, args.layout_dir,
                                   crop=crop, parser=args.parser, report_path=args.report)
    print(f"n={len(report.samples)} ssim={report.mean_ssim:.6f} mae={report.mean_mae:.6f}")
    return 0


def build_parser():
    p = _Parser(prog="facesketch", description="Face photo to sketch synthesis.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fixtures", help="write a synthetic dataset (train and test splits)")
    f.add_argument("--out", required=True, help="dataset root to create")
    f.add_argument("--n", type=int, default=4, help="samples per split")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--size", type=int, default=None,
                   help="square power-of-two size; default writes raw 200x250 images")
    f.add_argument("--parser", default="celebamask", choices=sorted(dataio.SOURCE_LABEL_TABLES),
                   help="label convention of the written parsing maps")
    f.set_defaults(func=cmd_fixtures)

    t = sub.add_parser("train", help="train a generator/discriminator pair")
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", default="runs", help="parent of the run directory")
    t.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="synthesize sketches for a directory of inputs")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input-dir", required=True, help="directory with photos/, saliency/, parsing/")
    i.add_argument("--out-dir", required=True)
    i.add_argument("--parser", default=None, help="label convention of the parsing maps")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predicted sketches against targets")
    e.add_argument("--pred-dir", required=True)
    e.add_argument("--target-dir", required=True)
    e.add_argument("--layout-dir", required=True)
    e.add_argument("--report", required=True, help="CSV report path")
    e.add_argument("--parser", default="celebamask", help="label convention of the layout maps")
    e.add_argument("--no-crop", action="store_true",
                   help="require predictions at target geometry instead of un-padding them")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"facesketch: usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonFinite as exc:
        print(f"facesketch: NonFinite: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"facesketch: usage error: {exc}", file=sys.stderr)
        return 1
    except (FaceSketchError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"facesketch: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
