"""
Expected retrieval budget from a difficulty mix
===============================================

Given the share of easy, medium and hard queries, the average number of
images matched per query is a weighted mean of ceil(alpha k), ceil(beta k)
and k. The mixes below are published NetVLAD splits for three benchmarks.
"""

from airloc.policy import PolicyConfig, expected_average_k

mixes = {"Cambridge": (10.9, 59.4, 29.7), "7Scenes": (4.5, 62.6, 32.9), "Aachen": (0.0, 34.9, 65.1)}
ks = (4, 5, 10, 20, 30)
print(f"{'':>10}" + "".join(f"{'k=' + str(k):>8}" for k in ks))
for name, mix in mixes.items():
    row = [expected_average_k(mix, PolicyConfig(k=k, alpha=0.5, beta=0.7)) for k in ks]
    print(f"{name:>10}" + "".join(f"{v:8.2f}" for v in row))
