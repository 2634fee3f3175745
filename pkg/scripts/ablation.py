"""Weighted F1 of the full model and both ablations over several model seeds."""
import argparse
from dataclasses import replace

from txscam.experiments import DetectionConfig, run_ablation, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--window", type=int, default=10, choices=[5, 10, 15])
    args = ap.parse_args()
    base = DetectionConfig()
    cfg = replace(base, walk=replace(base.walk, window=args.window))
    res = run_ablation(cfg, seeds=tuple(args.seeds), log=print)
    names = {None: "full", "graph": "graph encoder ablated", "transpose": "transposition ablated"}
    for key, vals in res.items():
        mean, sd = summarize(vals)
        print(f"{names[key]:<24} {mean:.3f} +/- {sd:.3f}  {['%.3f' % v for v in vals]}")


if __name__ == "__main__":
    main()
