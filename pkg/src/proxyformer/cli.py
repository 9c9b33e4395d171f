"""``proxyformer`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 refusal or usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backbone import default_vocabulary, tokenize
from .cmie import attention_flops
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .synthdata import (build_dataset, dataset_checksum, load_split, read_frames, split_seeds,
                        write_masks)

log = logging.getLogger("proxyformer")

EXIT_OK, EXIT_FAIL, EXIT_REFUSED = 0, 1, 2


class Refusal(Exception):
    """Raised for conditions that map to exit code 2."""


def _config(args) -> RunConfig:
    try:
        return load_config(args.config)
    except FileNotFoundError as exc:
        raise Refusal(f"config file not found: {exc.filename}") from exc
    except ConfigError as exc:
        raise Refusal(f"config error: {exc}") from exc


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _fresh_dir(path: Path, overwrite: bool) -> None:
    if path.exists() and any(path.iterdir()) and not overwrite:
        raise Refusal(f"{path} exists and is not empty (pass --overwrite)")
    if path.exists() and overwrite:
        for p in sorted(path.rglob("*"), reverse=True):
            p.rmdir() if p.is_dir() else p.unlink()
    path.mkdir(parents=True, exist_ok=True)


def _dataset(cfg: RunConfig, split: str):
    root = Path(cfg.data.path)
    if not (root / "index.json").exists():
        raise FileNotFoundError(f"dataset not found: expected {root / 'index.json'} (run gen-data first)")
    return load_split(root, split)


# verbs -------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    data = cfg.data if args.out is None else dataclasses.replace(cfg.data, path=args.out)
    try:
        index = build_dataset(data, overwrite=args.overwrite)
    except FileExistsError as exc:
        raise Refusal(str(exc)) from exc
    seeds = split_seeds(data)
    _emit({"path": data.path, "train": len(seeds["train"]), "val": len(seeds["val"]),
           "seeds": {k: [v[0], v[-1]] if v else [] for k, v in seeds.items()},
           "hard": sum(e["difficulty"] == "hard" for e in index["samples"]),
           "checksum": dataset_checksum(data.path), "config_hash": cfg.hash()})
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train

    cfg = _config(args)
    out = Path(args.out or cfg.train.out)
    train_set = _dataset(cfg, "train")
    val_set = _dataset(cfg, cfg.eval.split)
    _fresh_dir(out, args.overwrite)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))

    def show(rec):
        line = f"step {rec['step']} epoch {rec['epoch']:.1f} loss {rec['train']['total']:.4f}"
        if "JandF" in rec:
            line += f" J&F {rec['JandF']:.4f}"
        print(line, flush=True)

    res = train(cfg, train_set, val_set, out_dir=out, on_record=show)
    _emit({"final": str(res.checkpoints[-1]), "metrics": str(res.metric_log), "config_hash": cfg.hash()})
    return EXIT_OK


def _load_ckpt(args):
    from .training import load_checkpoint

    ck = load_checkpoint(args.checkpoint)
    if args.config is None:
        return ck, config_from_dict(ck.header["config"])
    cfg = _config(args)
    if cfg.model_hash() != ck.model_hash:
        raise Refusal(f"config hash mismatch: checkpoint model hash {ck.model_hash}, "
                      f"config model hash {cfg.model_hash()}")
    return ck, cfg


def cmd_eval(args) -> int:
    from .training import evaluate_samples

    ck, cfg = _load_ckpt(args)
    split = args.split or cfg.eval.split
    samples = _dataset(cfg, split)
    rep = evaluate_samples(ck.build(), samples, cfg.eval.batch_size, cfg.eval.thresholds)
    text = rep.to_json(config_hash=ck.header["config_hash"])
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        if out.exists() and not args.overwrite:
            raise Refusal(f"{out} exists (pass --overwrite)")
        out.write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_infer(args) -> int:
    from .training import predict

    ck, cfg = _load_ckpt(args)
    frames = read_frames(args.frames).astype(np.float64)
    vocab = default_vocabulary()
    try:
        tokens = tokenize(args.expression, vocab)
    except ValueError as exc:
        raise Refusal(str(exc)) from exc
    if all(t == vocab.unk_index for t in tokens):
        log.warning("no word of %r is in the vocabulary; proceeding with unknown tokens", args.expression)
    out = Path(args.out or "infer")
    _fresh_dir(out, args.overwrite)
    res = predict(ck.build(), [frames], [tokens])[0]
    write_masks(out / "masks.bin", res.masks)
    meta = {"expression": args.expression, "tokens": tokens, "query_index": res.query_index,
            "boxes": res.boxes.tolist(), "scores": res.scores.tolist(),
            "query_scores": res.query_scores.tolist(), "shape": list(res.masks.shape),
            "config_hash": ck.header["config_hash"]}
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    _emit({"out": str(out), "query_index": res.query_index, "config_hash": ck.header["config_hash"]})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import DimensionCapError, gradient_suite

    cfg = _config(args)
    try:
        report = gradient_suite(cfg, tol=args.tol)
    except DimensionCapError as exc:
        raise Refusal(str(exc)) from exc
    for name, err in report.errors.items():
        print(f"param  {name:<40s} {err:.3e}")
    for module, err in report.by_prefix(1).items():
        print(f"module {module:<40s} {err:.3e} {'ok' if err <= args.tol else 'FAIL'}")
    print(f"worst {report.worst:.3e} tol {args.tol:g} {'PASS' if report.passed else 'FAIL'} "
          f"config_hash {cfg.hash()}")
    return EXIT_OK if report.passed else EXIT_FAIL


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def cmd_flops(args) -> int:
    t, s, n, c = args.T, args.S, args.N, args.C
    rows = {}
    for mode in ("full", "decoupled", "proxy"):
        rows[mode] = {part: attention_flops(t, s, n, c, mode, part) for part in ("score", "projection", "total")}
    full = rows["full"]
    print(f"T={t} S={s} N={n} C={c}")
    print(f"{'mode':<10s} {'score':>16s} {'projection':>16s} {'total':>16s} {'score/full':>12s} {'total/full':>12s}")
    for mode, r in rows.items():
        print(f"{mode:<10s} {r['score']:>16d} {r['projection']:>16d} {r['total']:>16d} "
              f"{r['score'] / full['score']:>12.6g} {r['total'] / full['total']:>12.6g}")
    cfg_hash = _config(args).hash() if args.config else RunConfig().hash()
    print(f"config_hash {cfg_hash}")
    return EXIT_OK


# parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proxyformer", description="Proxy-query referring video segmentation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, out_help="output location"):
        sp.add_argument("--config", help="JSON run configuration (all fields optional)")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--overwrite", action="store_true", help="replace existing outputs")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    common(sub.add_parser("gen-data", help="write the synthetic dataset"), "dataset directory")
    common(sub.add_parser("train", help="train and checkpoint"), "run directory")
    sp = common(sub.add_parser("eval", help="evaluate a checkpoint"), "report file")
    sp.add_argument("checkpoint")
    sp.add_argument("--split", help="dataset split (default from config)")
    sp = common(sub.add_parser("infer", help="segment one video"), "output directory")
    sp.add_argument("checkpoint")
    sp.add_argument("frames", help="frames.bin file")
    sp.add_argument("expression")
    sp = common(sub.add_parser("gradcheck", help="finite-difference check at tiny dims"))
    sp.add_argument("--tol", type=float, default=1e-3)
    sp = common(sub.add_parser("flops", help="attention cost table"))
    for name, default in (("T", 8), ("S", 400), ("N", 5), ("C", 256)):
        sp.add_argument(f"-{name}", type=_positive_int, default=default)
    return p


VERBS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
         "gradcheck": cmd_gradcheck, "flops": cmd_flops}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_REFUSED
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return VERBS[args.verb](args)
    except Refusal as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
