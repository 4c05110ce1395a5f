"""Population minimizers of the cost-sensitive losses recover the Bayes classifier.

On a random finite instance space, fits a free score table for each loss and
compares its argmax with ``argmax_y (G^T p)_y``.

    python3 demos/calibration.py
"""

import warnings

import numpy as np

from cslearn.gainmat import factorize
from cslearn.losses import DistillParams, LossKind, LossSpec, SmsParams
from cslearn.metrics import CondProbTable, bayes_classify
from cslearn.training import predict, tabular_fit


def main():
    rng = np.random.default_rng(0)
    cond = CondProbTable.random(rng, n_points=8, m=3)
    G = rng.uniform(0.1, 2.0, (3, 3))
    alpha, beta = rng.uniform(0.5, 2.0, 3), rng.uniform(0.0, 1.0, 3)
    sms = SmsParams(alpha, beta)
    cases = {
        "logit adjusted": (LossSpec(LossKind.LOGIT_ADJUSTED, gain=np.diag(np.diag(G))), np.diag(np.diag(G))),
        "hybrid": (LossSpec(LossKind.HYBRID, factorization=factorize(G, "diagonal")), G),
        "sms": (LossSpec(LossKind.SMS, sms=sms), sms.gain()),
        "distill, gamma 0.5": (LossSpec(LossKind.DISTILL, distill=DistillParams(factorize(G, "diagonal"), 0.5)), G),
    }
    ids = np.arange(cond.n_points)
    for name, (loss, gain) in cases.items():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = tabular_fit(loss, cond)
        agree = np.mean(predict(model, ids) == bayes_classify(gain, cond.p))
        print(f"{name:<20} agreement with Bayes {agree:.0%} after {model.fit_info.iters} iterations")


if __name__ == "__main__":
    main()
