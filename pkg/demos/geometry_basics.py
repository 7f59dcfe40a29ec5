#!/usr/bin/env python3
"""Tour of the point-cloud utilities: normalization, FPS, cropping, merging.

Run directly; prints every step. Everything is seeded, so two runs print
identical numbers.
"""

import numpy as np

from vdpcn.geometry import (
    farthest_point_sample,
    knn_crop,
    merge_and_resample,
    normalize_to_unit,
)

rng = np.random.default_rng(0)

# A raw cloud, deliberately off-center and large.
cloud = rng.normal(size=(2000, 3)) * 4.0 + np.array([10.0, -3.0, 0.5])
print(f"raw cloud: {cloud.shape[0]} points, centroid {cloud.mean(axis=0).round(2)}")

# Normalization moves the centroid to the origin and scales the farthest
# point onto the unit sphere. The returned transform inverts exactly.
normalized, transform = normalize_to_unit(cloud)
radius = np.linalg.norm(normalized, axis=1).max()
print(f"normalized: centroid {normalized.mean(axis=0).round(8)}, max radius {radius:.6f}")
restored = transform.invert(normalized)
print(f"round trip error: {np.abs(restored - cloud).max():.2e}")

# Farthest point sampling keeps a well-spread subset. Compare the nearest
# neighbor spacing of an FPS subset against a random subset of equal size.
fps_subset = farthest_point_sample(normalized, 100)
random_subset = normalized[rng.choice(2000, size=100, replace=False)]


def min_spacing(pts):
    d = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
    np.fill_diagonal(d, np.inf)
    return d.min()


print(f"min pairwise spacing: fps {min_spacing(fps_subset):.4f}, "
      f"random {min_spacing(random_subset):.4f}")

# knn_crop removes the fraction of points nearest a seed location, which is
# how partial inputs are made. The partition is exact.
seed_point = np.array([1.0, 0.0, 0.0])
partial, removed = knn_crop(normalized, seed_point, ratio=0.25)
print(f"crop at {seed_point}: kept {partial.shape[0]}, removed {removed.shape[0]}")
assert partial.shape[0] + removed.shape[0] == normalized.shape[0]

# merge_and_resample merges two clouds and resamples with FPS, used when a
# completion is fused back with the observed points.
merged = merge_and_resample(partial, removed, 512)
print(f"merged and resampled to {merged.shape[0]} points")
