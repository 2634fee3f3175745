"""Detection time and edge count on a dense neighborhood, whole graph versus walk sample."""
import argparse

from txscam.experiments import runtime_reduction


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--edges", type=int, default=12_000)
    ap.add_argument("--window", type=int, default=5)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    rc = runtime_reduction(args.edges, args.window, args.repeats)
    print(f"edges     {rc.full_edges} -> {rc.sampled_edges} ({rc.edge_fraction:.1%})")
    print(f"seconds   {rc.full_seconds:.3f} -> {rc.sampled_seconds:.3f} ({rc.speedup:.1f}x faster)")


if __name__ == "__main__":
    main()
