"""Train and test the full detector on a generated scam/normal corpus."""
import argparse
import json
from dataclasses import replace

from txscam.experiments import DetectionConfig, run_detection


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()
    base = DetectionConfig()
    cfg = replace(base, corpus=replace(base.corpus, seed=args.seed), walk=replace(base.walk, seed=args.seed),
                  model=replace(base.model, seed=args.seed, epochs=args.epochs), split_seed=args.seed)
    r = run_detection(cfg, log=print)
    print(json.dumps({"f1": r.test.f1, "weighted_f1": r.test.weighted_f1, "accuracy": r.test.accuracy,
                      "best_epoch": r.best_epoch, "seconds": round(r.seconds, 1)}, indent=2))


if __name__ == "__main__":
    main()
