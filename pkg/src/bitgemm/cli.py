"""Command-line front end.

Subcommands
-----------
gen           write a random matrix (.dstc) or activation stack (.dmat)
gemm          one bitmap GEMM with a matmul self-check and cost report
conv          run layer configs from a JSON file in one or more modes
im2col-bench  operation-count comparison for the lowering, dense vs bitmap
sweep         run a scenario file end to end, emitting CSV reports
verify        structural validation of .dstc / .dmat files

The process exits 0 only when every self-check in the invocation
passed. Set DSTC_LOG=debug|info|warning|error to control logging.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .bench import (
    ORACLE_TOLERANCE,
    frobenius_rel_error,
    im2col_op_counts,
    load_scenarios,
    reference_conv,
    reference_gemm,
    run_sweep,
)
from .conv import MODES, parse_layer, spconv
from .costmodel import cost_reports_to_csv, total_cost
from .errors import BitgemmError
from .formats import DEFAULT_TILE, decode, encode, encode_single
from .generate import make_rng, random_conv_problem, random_map, random_matrix
from .im2col import ConvShape
from .io import load_dmat, load_dstc, save_dmat, save_dstc
from .spgemm import device_spgemm

log = logging.getLogger("bitgemm.cli")


def _setup_logging() -> None:
    level_name = os.environ.get("DSTC_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    rng = make_rng(args.seed)
    out = _out_dir(args)
    if args.kind == "matrix":
        dense = random_matrix(args.rows, args.cols, args.density, rng)
        path = out / f"{args.name}.dstc"
        save_dstc(path, encode(dense, tile_rows=args.tile, tile_cols=args.tile))
    else:
        stack = random_map(args.rows, args.cols, args.channels, args.density, rng)
        path = out / f"{args.name}.dmat"
        save_dmat(path, stack)
    print(f"wrote {path}")
    return 0


def cmd_gemm(args) -> int:
    rng = make_rng(args.seed)
    a = random_matrix(args.m, args.k, args.a_density, rng)
    b = random_matrix(args.k, args.n, args.b_density, rng)
    result, trace = device_spgemm(
        encode(a, value_order="col"), encode(b, value_order="row"))
    err = frobenius_rel_error(result, reference_gemm(a, b))
    report = total_cost(trace, scenario=f"gemm_{args.m}x{args.n}x{args.k}")
    out = _out_dir(args)
    trace.to_csv(out / "trace.csv")
    cost_reports_to_csv([report], out / "cost_report.csv")
    ok = err <= ORACLE_TOLERANCE
    print(f"gemm {args.m}x{args.n}x{args.k}: rel_err={err:.3e} "
          f"speedup={report.speedup:.4f} [{'ok' if ok else 'FAIL'}]")
    return 0 if ok else 1


def cmd_conv(args) -> int:
    with open(args.layers, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    layers = doc if isinstance(doc, list) else doc.get("layers", [])
    out = _out_dir(args)
    reports = []
    all_ok = True
    for i, obj in enumerate(layers):
        layer = parse_layer(obj)
        modes = [layer["mode"]] if not args.all_modes else list(MODES)
        for mode in modes:
            cfg = dict(layer, mode=mode)
            problem, stack, weights = random_conv_problem(cfg, make_rng(args.seed + i))
            result, trace = spconv(problem)
            err = frobenius_rel_error(
                result, reference_conv(stack, weights, problem.shape))
            label = f"{layer['name']}_{mode}"
            report = total_cost(trace, scenario=label)
            reports.append(report)
            ok = err <= ORACLE_TOLERANCE
            all_ok = all_ok and ok
            print(f"{label}: rel_err={err:.3e} speedup={report.speedup:.4f} "
                  f"[{'ok' if ok else 'FAIL'}]")
    if reports:
        cost_reports_to_csv(reports, out / "cost_reports.csv")
    return 0 if all_ok else 1


def cmd_im2col_bench(args) -> int:
    with open(args.layers, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    layers = doc if isinstance(doc, list) else doc.get("layers", [])
    all_ok = True
    for i, obj in enumerate(layers):
        layer = parse_layer(obj)
        shape = ConvShape(H=layer["H"], W=layer["W"], C=layer["C"], N=layer["N"],
                          Kh=layer["Kh"], Kw=layer["Kw"], S=layer["S"])
        rng = make_rng(args.seed + i)
        stack = random_map(shape.H, shape.W, shape.C, layer["act_density"], rng)
        maps = [encode_single(stack[:, :, c]) for c in range(shape.C)]
        counts = im2col_op_counts(maps, shape)
        ok = counts.bitmap_data_dependent_reads < counts.csr_data_dependent_reads
        all_ok = all_ok and ok
        print(f"{layer['name']}: dense_reads={counts.dense_value_reads} "
              f"bitmap_reads={counts.bitmap_value_reads} "
              f"words={counts.bitmap_words_touched} "
              f"csr_dep_reads={counts.csr_data_dependent_reads} "
              f"[{'ok' if ok else 'FAIL'}]")
    return 0 if all_ok else 1


def cmd_sweep(args) -> int:
    scenarios = load_scenarios(args.scenarios)
    ok = run_sweep(scenarios, _out_dir(args), base_seed=args.seed,
                   threads=args.threads, plot_data=args.plot_data)
    print(f"sweep: {len(scenarios)} scenario(s) [{'ok' if ok else 'FAIL'}]")
    return 0 if ok else 1


def cmd_verify(args) -> int:
    all_ok = True
    for name in args.paths:
        path = Path(name)
        try:
            if path.suffix == ".dmat":
                stack = load_dmat(path)
                detail = f"stack {stack.shape[0]}x{stack.shape[1]}x{stack.shape[2]}"
            else:
                enc = load_dstc(path)
                # decode re-checks warp-bit/tile agreement and per-tile popcounts
                decode(enc)
                detail = (f"matrix {enc.rows}x{enc.cols}, "
                          f"{int(enc.warp_bitmap.sum())} live tile(s)")
            print(f"{path}: ok ({detail})")
        except (OSError, BitgemmError) as exc:
            print(f"{path}: FAIL ({exc})")
            all_ok = False
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bitgemm",
        description="Bitmap-encoded sparse GEMM/conv kernels and cost model.")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base RNG seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--tile", type=int, default=DEFAULT_TILE,
                        help="tile edge for encodings")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for sweeps")
    common.add_argument("--plot-data", action="store_true",
                        help="also emit long-format plot_data.csv")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate random operands")
    p.add_argument("--kind", choices=("matrix", "map"), default="matrix")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--density", type=float, required=True)
    p.add_argument("--name", default="operand")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("gemm", parents=[common], help="run one bitmap GEMM")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--a-density", type=float, default=1.0)
    p.add_argument("--b-density", type=float, default=1.0)
    p.set_defaults(func=cmd_gemm)

    p = sub.add_parser("conv", parents=[common], help="run conv layer configs")
    p.add_argument("layers", help="JSON file with layer objects")
    p.add_argument("--all-modes", action="store_true",
                   help="run each layer in dense, single and dual modes")
    p.set_defaults(func=cmd_conv)

    p = sub.add_parser("im2col-bench", parents=[common],
                       help="lowering operation counts, dense vs bitmap")
    p.add_argument("layers", help="JSON file with layer objects")
    p.set_defaults(func=cmd_im2col_bench)

    p = sub.add_parser("sweep", parents=[common], help="run a scenario file")
    p.add_argument("scenarios", help="JSON scenario file")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", parents=[common],
                       help="validate .dstc/.dmat files")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BitgemmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
