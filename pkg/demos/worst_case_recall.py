"""Worst-case recall on a 10-class long-tail Gaussian mixture.

Trains plain cross-entropy, prior logit adjustment and the two reductions
(re-weighted and logit-adjusted cost-sensitive steps) on the same split and
prints test min-recall and average recall for each.

    python3 demos/worst_case_recall.py [seed] [linear|mlp]
"""

import sys

from cslearn.desk import worst_case_recall_study, worst_case_settings


def main():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    model = sys.argv[2] if len(sys.argv) > 2 else "linear"
    results = worst_case_recall_study(worst_case_settings(model), seed)
    print(f"{'method':<10} {'min recall':>10} {'avg recall':>10}")
    for name, rep in results.items():
        print(f"{name:<10} {rep['min_recall']:>10.3f} {rep['avg_recall']:>10.3f}")


if __name__ == "__main__":
    main()
