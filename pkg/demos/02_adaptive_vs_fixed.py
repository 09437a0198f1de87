"""
Adaptive retrieval against a fixed top-k
========================================

Calibrate the two score thresholds, then compare matching cost and pose
accuracy of the adaptive budget with fixed-k localisation.
"""

import numpy as np

from airloc.analytics import calibrate_thresholds, summarize_errors
from airloc.index import query_score
from airloc.pipeline import Adaptive, Fixed, run_batch
from airloc.policy import PolicyConfig, classify
from airloc.synthworld import WorldConfig, generate

world = generate(WorldConfig())
bundle, queries = world.bundle, world.queries
gt = queries.ground_truth()

# 15% of queries easy, 30% hard
scores = [query_score(bundle.index, q.global_descriptor) for q in queries]
gamma_low, gamma_high = calibrate_thresholds(scores, easy_fraction=0.15, hard_fraction=0.3)
policy = PolicyConfig(k=10, gamma_low=gamma_low, gamma_high=gamma_high)
print(f"gamma_low {gamma_low:.4f}  gamma_high {gamma_high:.4f}")

print(f"{'run':>10} {'pairs':>6} {'med ATE [m]':>12} {'med ARE [deg]':>14} {'high %':>7}")
for k in (1, 3, 5, 10, 20):
    s = summarize_errors(run_batch(queries, bundle, Fixed(k)).results, gt).overall
    print(f"{'fixed ' + str(k):>10} {k * len(queries):6d} {s.median_ate:12.5f} {s.median_are:14.4f} {s.buckets.high:7.1f}")

adaptive = run_batch(queries, bundle, Adaptive(policy))
s = summarize_errors(adaptive.results, gt)
print(f"{'adaptive':>10} {adaptive.summary['total_pair_units']:6d} {s.overall.median_ate:12.5f} "
      f"{s.overall.median_are:14.4f} {s.overall.buckets.high:7.1f}")
print("difficulty counts:", adaptive.summary["difficulty_counts"])

# error per difficulty class at the largest budget
labels = np.array([classify(x, policy).value for x in scores])
fixed20 = run_batch(queries, bundle, Fixed(20)).results
for d in ("easy", "medium", "hard"):
    sub = [r for r, lab in zip(fixed20, labels) if lab == d]
    st = summarize_errors(sub, gt).overall
    print(f"k=20 {d:>6}: median ATE {st.median_ate:.5f} m, ARE {st.median_are:.4f} deg")
