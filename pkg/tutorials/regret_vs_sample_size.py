"""
Regret and its bounding terms as the sample grows
=================================================

Mean soft regret and the two product-form terms over a few sample sizes.
Each term is a product of two estimation errors, so a fourfold increase
in N shrinks each of them roughly fourfold.
"""

import numpy as np

from npgflow import LearnerConfig, fixture_a, random_env, run_campaign

seeds = list(range(30))
sizes = [500, 2000, 8000]

for name, env in [("one context", fixture_a()), ("5 x 3 random", random_env(5, 3, seed=1))]:
    print(name)
    print("      N   regret      |II|       III")
    previous = None
    for N in sizes:
        reps = run_campaign(env, "tabular", N, seeds, LearnerConfig(lam=0.5))
        row = np.array(
            [
                np.mean([r.soft_regret for r in reps]),
                np.mean([abs(r.term_II) for r in reps]),
                np.mean([r.term_III for r in reps]),
            ]
        )
        ratio = "" if previous is None else "  ratios " + " ".join("%.2f" % v for v in previous / row)
        print("%7d  %.2e  %.2e  %.2e%s" % (N, *row, ratio))
        previous = row
