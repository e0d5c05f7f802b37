#!/usr/bin/env python3
"""Compare step-skipping modes across representative conv layers.

Each layer runs through the same value path in dense, single-side, and
dual-side accounting, so the three rows per layer share one result and
differ only in modeled cost. The full list takes about ten seconds;
--layers picks a subset by name.

    python scripts/layer_sweep.py --layers stem,mid
"""
import argparse
import sys

from bitgemm.bench import ORACLE_TOLERANCE, run_conv
from bitgemm.costmodel import cost_reports_to_csv

LAYERS = (
    dict(name="stem", H=28, W=28, C=32, N=32, Kh=3, Kw=3, S=1,
         act_density=0.5, wgt_density=0.5),
    dict(name="mid", H=56, W=56, C=128, N=128, Kh=3, Kw=3, S=1,
         act_density=0.5, wgt_density=0.25),
    dict(name="strided", H=29, W=29, C=64, N=64, Kh=5, Kw=5, S=2,
         act_density=0.3, wgt_density=0.3),
    dict(name="pointwise", H=14, W=14, C=256, N=64, Kh=1, Kw=1, S=1,
         act_density=0.4, wgt_density=0.15),
)


def parse_args(argv):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="layer_sweep.csv")
    parser.add_argument("--layers", default=",".join(l["name"] for l in LAYERS),
                        help="comma-separated subset of layer names")
    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    wanted = set(args.layers.split(","))
    unknown = wanted - {l["name"] for l in LAYERS}
    if unknown:
        print(f"unknown layers: {sorted(unknown)}", file=sys.stderr)
        return 2
    print(f"{'layer':>10} {'mode':>7} {'executed':>10} {'baseline':>10} "
          f"{'cycles':>10} {'speedup':>8} {'rel_err':>10}")
    reports = []
    worst = 0.0
    for layer in LAYERS:
        if layer["name"] not in wanted:
            continue
        for mode in ("dense", "single", "dual"):
            label = f"{layer['name']}/{mode}"
            params = dict(layer, mode=mode)
            del params["name"]
            _, _, report, err = run_conv(params, args.seed, scenario=label)
            worst = max(worst, err)
            reports.append(report)
            print(f"{layer['name']:>10} {mode:>7} {report.ohmma_issued:>10} "
                  f"{report.ohmma_issued + report.ohmma_skipped:>10} "
                  f"{report.total_cycles:>10} {report.speedup:>8.3f} {err:>10.2e}")
    cost_reports_to_csv(reports, args.out)
    print(f"\nwrote {args.out} ({len(reports)} rows), max rel err {worst:.2e}")
    return 0 if worst <= ORACLE_TOLERANCE else 1


if __name__ == "__main__":
    sys.exit(main())
