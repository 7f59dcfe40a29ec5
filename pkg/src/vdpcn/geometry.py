"""Point-set primitives shared across the pipeline.

Everything here operates on float64 numpy arrays of shape (N, 3) and is a
pure function of its inputs: no global state, no hidden RNG. Sampling and
cropping are deterministic so that training runs and tests reproduce
bit-for-bit.
"""

from dataclasses import dataclass

import numpy as np


def _as_points(points):
    """Validate and return an (N, 3) float64 view of the input."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) point array, got shape {pts.shape}")
    if pts.shape[0] < 1:
        raise ValueError("point cloud must contain at least one point")
    if not np.isfinite(pts).all():
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


@dataclass
class NormalizationTransform:
    """Affine map (translate then scale) taking raw points into the unit ball.

    apply(p) = (p - translation) / scale, invert(p) = p * scale + translation.
    """

    translation: np.ndarray
    scale: float

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - self.translation) / self.scale

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) * self.scale + self.translation


def normalize_to_unit(points):
    """Center a cloud on its centroid and scale it to max radius 1.

    Returns (normalized_points, transform) where the transform maps the
    original coordinates into the normalized frame and back.

    Raises ValueError("zero extent") when all points coincide, since no
    positive scale exists.
    """
    pts = _as_points(points)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    radius = float(np.linalg.norm(centered, axis=1).max())
    if radius <= 0.0:
        raise ValueError("zero extent")
    return centered / radius, NormalizationTransform(translation=centroid, scale=radius)


def farthest_point_indices(points, m):
    """Greedy farthest-point sampling, returned as indices into the input.

    Starts at index 0 and repeatedly adds the point whose distance to the
    selected set is largest. Ties resolve to the lowest index (argmax takes
    the first occurrence), which keeps the output reproducible.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if m < 1:
        raise ValueError("sample size must be at least 1")
    if m > n:
        raise ValueError(f"cannot sample {m} points from a cloud of {n}")
    idx = np.empty(m, dtype=np.int64)
    idx[0] = 0
    # min-distance of every point to the selected set, updated incrementally
    dist = np.linalg.norm(pts - pts[0], axis=1)
    for i in range(1, m):
        j = int(np.argmax(dist))
        idx[i] = j
        dist = np.minimum(dist, np.linalg.norm(pts - pts[j], axis=1))
    return idx


def farthest_point_sample(points, m):
    """Subsample a cloud to m points with deterministic farthest-point sampling."""
    pts = _as_points(points)
    return pts[farthest_point_indices(pts, m)]


def knn_crop(points, seed_point, ratio):
    """Split a cloud into (partial, removed) by deleting the fraction nearest a seed.

    The removed set holds the round(N * ratio) points closest to seed_point
    in Euclidean distance (round half up); the partial set is the exact
    complement, both in original point order. Distance ties resolve by
    original index via a stable sort.
    """
    pts = _as_points(points)
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"crop ratio must lie in (0, 1), got {ratio}")
    seed = np.asarray(seed_point, dtype=np.float64).reshape(3)
    n = pts.shape[0]
    n_remove = int(np.floor(n * ratio + 0.5))
    if n_remove < 1 or n_remove >= n:
        raise ValueError(f"crop of {n_remove} points from {n} leaves no partition")
    dist = np.linalg.norm(pts - seed, axis=1)
    order = np.argsort(dist, kind="stable")
    removed_mask = np.zeros(n, dtype=bool)
    removed_mask[order[:n_remove]] = True
    return pts[~removed_mask], pts[removed_mask]


def merge_and_resample(generated, input_cloud, m):
    """Concatenate two clouds and farthest-point-sample the union to m points."""
    gen = _as_points(generated)
    inp = _as_points(input_cloud)
    total = gen.shape[0] + inp.shape[0]
    if m > total:
        raise ValueError(f"cannot resample {total} merged points to {m}")
    merged = np.concatenate([gen, inp], axis=0)
    return farthest_point_sample(merged, m)
