"""Point cloud evaluation metrics.

Chamfer distances come in the two conventions used by the completion
literature: the L1 variant is the halved mean of symmetric nearest-neighbor
distances, the L2 variant is the plain sum of both mean squared distances.
Values are returned in normalized model units; any display scaling (x1e3,
x1e4) happens at the reporting layer, never here.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import _as_points


def _nearest_distances(src, dst):
    """Distance from every src point to its nearest dst point (kd-tree)."""
    dist, _ = cKDTree(dst).query(src, k=1)
    return np.asarray(dist, dtype=np.float64)


def _check_pair(p, q):
    p = _as_points(p)
    q = _as_points(q)
    return p, q


def chamfer_l1(p, q):
    """Halved-mean symmetric Chamfer distance with unsquared norms."""
    p, q = _check_pair(p, q)
    return 0.5 * (_nearest_distances(p, q).mean() + _nearest_distances(q, p).mean())


def chamfer_l2(p, q):
    """Sum of both mean squared nearest-neighbor distances."""
    p, q = _check_pair(p, q)
    d_pq = _nearest_distances(p, q)
    d_qp = _nearest_distances(q, p)
    return float((d_pq**2).mean() + (d_qp**2).mean())


def f_score(p, q, threshold=0.01):
    """Harmonic mean of precision and recall at a distance threshold.

    Precision is the fraction of p within threshold of q, recall the fraction
    of q within threshold of p; 0 when both vanish.
    """
    if threshold <= 0.0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    p, q = _check_pair(p, q)
    precision = float((_nearest_distances(p, q) <= threshold).mean())
    recall = float((_nearest_distances(q, p) <= threshold).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def naive_chamfer_oracle(p, q, squared=False):
    """Exhaustive double-loop Chamfer distance, used only as a test oracle.

    Deliberately avoids the kd-tree path: every pairwise distance is formed
    explicitly, one query row at a time.
    """
    p, q = _check_pair(p, q)
    d_pq = np.empty(p.shape[0])
    for i in range(p.shape[0]):
        d_pq[i] = np.sqrt(((q - p[i]) ** 2).sum(axis=1)).min()
    d_qp = np.empty(q.shape[0])
    for j in range(q.shape[0]):
        d_qp[j] = np.sqrt(((p - q[j]) ** 2).sum(axis=1)).min()
    if squared:
        return float((d_pq**2).mean() + (d_qp**2).mean())
    return 0.5 * (d_pq.mean() + d_qp.mean())


@dataclass
class MetricReport:
    """Aggregated evaluation results, overall and per category."""

    cd_l1: float
    cd_l2: float
    f_score: float
    per_category: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "cd_l1": self.cd_l1,
            "cd_l2": self.cd_l2,
            "f_score": self.f_score,
            "per_category": self.per_category,
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            cd_l1=d["cd_l1"],
            cd_l2=d["cd_l2"],
            f_score=d["f_score"],
            per_category=dict(d.get("per_category", {})),
        )
