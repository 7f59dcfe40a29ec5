#!/usr/bin/env python3
"""The completion metrics on hand-checkable inputs.

CD_L1 is the halved sum of mean nearest distances, CD_L2 the sum of mean
squared nearest distances, and the F-score counts points matched within a
threshold. The kd-tree implementations agree with an exhaustive double-loop
oracle to near machine precision.
"""

import numpy as np

from vdpcn.metrics import chamfer_l1, chamfer_l2, f_score, naive_chamfer_oracle

# Closed forms first. Identical clouds score 0 (and F-score 1).
rng = np.random.default_rng(3)
cloud = rng.normal(size=(500, 3))
print(f"identity: CD_L1 {chamfer_l1(cloud, cloud)}, CD_L2 {chamfer_l2(cloud, cloud)}, "
      f"F {f_score(cloud, cloud, threshold=0.01)}")

# Two single points at distance 1: each direction contributes 1, halved sum = 1.
a = np.array([[0.0, 0.0, 0.0]])
b = np.array([[1.0, 0.0, 0.0]])
print(f"unit offset: CD_L1 {chamfer_l1(a, b)}")

# At distance 2 the squared form gives 4 + 4 = 8.
c = np.array([[0.0, 2.0, 0.0]])
print(f"distance 2: CD_L2 {chamfer_l2(a, c)}")

# F-score with a mixed match: two of three points on target, one far away.
pred = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
gt = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
print(f"partial match: F {f_score(pred, gt, threshold=0.01):.6f} (precision 2/3, recall 1)")

# Oracle agreement on random pairs. The oracle forms every pairwise
# distance explicitly; the library uses kd-trees.
worst = 0.0
for _ in range(20):
    p = rng.normal(size=(rng.integers(10, 300), 3))
    q = rng.normal(size=(rng.integers(10, 300), 3))
    worst = max(worst, abs(chamfer_l1(p, q) - naive_chamfer_oracle(p, q)))
    worst = max(worst, abs(chamfer_l2(p, q) - naive_chamfer_oracle(p, q, squared=True)))
print(f"max |kd-tree - naive| over 20 random pairs: {worst:.2e}")
