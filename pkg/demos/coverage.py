"""Average recall subject to per-class coverage of at least 0.95/m.

Compares the re-weighted surrogate against the two hybrid factorizations and
prints test average recall and the smallest validation coverage slack.

    python3 demos/coverage.py [seed] [linear|mlp]
"""

import sys

from cslearn.desk import coverage_settings, coverage_study


def main():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    model = sys.argv[2] if len(sys.argv) > 2 else "linear"
    results = coverage_study(coverage_settings(model), seed)
    print(f"{'method':<12} {'avg recall':>10} {'min slack':>10}")
    for name, rep in results.items():
        slack = min(rep["val_coverage"]) - rep["target"]
        print(f"{name:<12} {rep['avg_recall']:>10.3f} {slack:>+10.4f}")


if __name__ == "__main__":
    main()
