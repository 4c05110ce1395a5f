"""Post-shifting exact posteriors against a brute-force grid over multipliers.

    python3 demos/postshift.py
"""

import numpy as np

from cslearn.checks import grid_search_min_recall
from cslearn.metrics import CondProbTable
from cslearn.reductions import post_shift


def main():
    cond = CondProbTable.random(np.random.default_rng(0), n_points=50, m=3)
    prior = cond.class_prior()
    res = post_shift(cond.p, cond.p, prior, step=0.03, T=3000, weights=cond.mu)
    grid, lam = grid_search_min_recall(cond.p, cond.p, prior, cond.mu)
    print(f"post-shift min recall {res.min_recall:.4f} at iterate {res.best_t}, lambda {np.round(res.lam, 3)}")
    print(f"grid search min recall {grid:.4f}, lambda {lam}")


if __name__ == "__main__":
    main()
