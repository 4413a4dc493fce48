"""Command-line interface.

Verbs: gen-source, train, eval, encode, decode, cells, bd, run, report,
recipes. Environment overrides: ECVQLAB_RUNS (output root for `run`) and
ECVQLAB_WORKERS (worker pool size).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from . import harness, sources
from .codecs import CODEC_KINDS, load_codec
from .metrics import (RDCurve, RDPoint, bd_psnr, bd_rate, neighbor_stats,
                      partition_svg, rasterize_partition, write_pgm)


def _parse_kv(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise SystemExit(f"expected key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _spec_from_args(args, seed=None):
    return sources.SourceSpec(args.family, args.dim, _parse_kv(getattr(args, "param", None)),
                              seed=args.seed if seed is None else seed,
                              label=getattr(args, "label", "") or "")


def _add_source_args(p, with_label=True):
    p.add_argument("--family", required=True, choices=sorted(sources.FAMILIES))
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="family parameter override (repeatable)")
    p.add_argument("--seed", type=int, default=cfg.DEFAULT_BASE_SEED)
    if with_label:
        p.add_argument("--label", default="")


def cmd_gen_source(args):
    spec = _spec_from_args(args)
    X = sources.sample(spec, args.n)
    fmt = args.format or ("csv" if str(args.out).endswith(".csv") else "bin")
    if fmt == "csv":
        sources.write_csv(X, args.out)
    else:
        sources.write_binary(X, args.out)
    print(sources.describe(spec))
    print(f"wrote {X.shape[0]} x {X.shape[1]} samples to {args.out} ({fmt})")


def cmd_train(args):
    spec = _spec_from_args(args)
    pool_n = args.train_pool or cfg.train_pool_size(spec.dim)
    pool = sources.sample(spec, pool_n)
    params = dict(cfg.train_config(args.codec, spec.dim))
    if args.codec != "ntc":
        params["n_codewords"] = args.n_codewords
    params.update(_parse_kv(args.opt))
    params.update(dim=spec.dim, lam=args.lam, seed=args.model_seed)
    model = CODEC_KINDS[args.codec](**params)
    model.fit(pool)
    model.save(args.out)
    print(f"trained {args.codec} (lam={args.lam:g}) on {spec.label}; saved to {args.out}")


def cmd_eval(args):
    model = load_codec(args.model)
    spec = _spec_from_args(args)
    point = model.evaluate(sources.sample(spec, args.n))
    print(json.dumps({"codec": model.kind, "source": spec.label, "n_eval": args.n,
                      "rate_bpd": point.rate, "mse": point.mse, "psnr_db": point.psnr},
                     indent=2))


def cmd_encode(args):
    model = load_codec(args.model)
    X = sources.read_samples(args.input)
    buf = model.encode_samples(X)
    Path(args.out).write_bytes(buf)
    bits = 8 * len(buf)
    n = max(1, X.shape[0])
    print(f"encoded {X.shape[0]} samples into {len(buf)} bytes "
          f"({bits / (n * model.dim):.4f} bits per dimension incl. header)")


def cmd_decode(args):
    model = load_codec(args.model)
    recon = model.decode_samples(Path(args.stream).read_bytes())
    sources.write_csv(recon, args.out)
    print(f"decoded {recon.shape[0]} reconstructions to {args.out}")


def cmd_cells(args):
    model = load_codec(args.model)
    if model.dim != 2:
        raise SystemExit("cells requires a 2-d model")
    raster = rasterize_partition(model.encode_points, bounds=(args.lo, args.hi),
                                 resolution=args.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    partition_svg(raster, out / "cells.svg")
    write_pgm(raster, out / "cells.pgm")
    print(f"partition written to {out} (mean distinct neighbors: "
          f"{neighbor_stats(raster):.3f})")


def _load_curve(spec_str):
    if ":" in spec_str:
        path, codec = spec_str.rsplit(":", 1)
    else:
        path, codec = spec_str, None
    rows = Path(path).read_text().strip().splitlines()
    header = rows[0].split(",")
    points = []
    for row in rows[1:]:
        rec = dict(zip(header, row.split(",")))
        if codec is not None and rec.get("codec") != codec:
            continue
        points.append(RDPoint(rate=float(rec["rate_bpd"]), mse=float(rec["mse"])))
    if not points:
        raise SystemExit(f"no points matched {spec_str!r}")
    return RDCurve(points)


def cmd_bd(args):
    a = _load_curve(args.curve_a)
    b = _load_curve(args.curve_b)
    if args.metric == "psnr":
        print(f"BD-PSNR (A over B): {bd_psnr(a, b):+.4f} dB")
    else:
        print(f"BD-rate (A over B): {bd_rate(a, b):+.3f} %")


def cmd_run(args):
    if args.recipe:
        manifest = harness.recipe(args.recipe, base_seed=args.seed)
    else:
        manifest = harness.load_manifest(args.manifest)
    out_dir = harness.run(manifest, out_root=args.out_root, workers=args.workers)
    print(f"run complete: {out_dir}")
    print(harness.report(out_dir))


def cmd_report(args):
    print(harness.report(args.run_dir))


def cmd_recipes(args):
    if args.show:
        manifest = harness.recipe(args.show)
        import yaml
        print(yaml.safe_dump(manifest, sort_keys=True))
    else:
        print("available recipes:")
        for name in harness.RECIPES:
            n_jobs = len(harness.recipe(name)["jobs"])
            print(f"  {name:<12} ({n_jobs} grid points)")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="ecvqlab",
                                     description="rate-distortion quantization lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-source", help="sample a toy source to CSV or binary")
    _add_source_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "bin"], default=None,
                   help="default: by file extension")
    p.set_defaults(func=cmd_gen_source)

    p = sub.add_parser("train", help="train one codec at one lambda")
    _add_source_args(p)
    p.add_argument("--codec", required=True, choices=sorted(CODEC_KINDS))
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--n-codewords", type=int, default=256)
    p.add_argument("--train-pool", type=int, default=None)
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--opt", action="append", metavar="KEY=VALUE",
                   help="codec constructor override (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on fresh samples")
    _add_source_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=cfg.EVAL_SAMPLES)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("encode", help="range-code samples into a bitstream")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="samples (.csv or gen-source binary)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream back to reconstructions")
    p.add_argument("--model", required=True)
    p.add_argument("--stream", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("cells", help="rasterize a 2-d model's quantization partition")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lo", type=float, default=-4.0)
    p.add_argument("--hi", type=float, default=4.0)
    p.add_argument("--resolution", type=int, default=512)
    p.set_defaults(func=cmd_cells)

    p = sub.add_parser("bd", help="Bjontegaard delta between two curve CSVs")
    p.add_argument("--curve-a", required=True, help="curves CSV, optionally PATH:codec")
    p.add_argument("--curve-b", required=True)
    p.add_argument("--metric", choices=["psnr", "rate"], default="psnr")
    p.set_defaults(func=cmd_bd)

    p = sub.add_parser("run", help="execute a recipe or manifest grid")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--recipe", choices=harness.RECIPES)
    group.add_argument("--manifest")
    p.add_argument("--seed", type=int, default=cfg.DEFAULT_BASE_SEED)
    p.add_argument("--out-root", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize a run directory (BD tables)")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("recipes", help="list named experiment recipes")
    p.add_argument("--show", default=None, help="print one recipe's manifest YAML")
    p.set_defaults(func=cmd_recipes)

    args = parser.parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
