"""Orthographic depth rendering of point clouds into k-view image groups.

Each view is defined by an outward unit direction (object toward camera), an
up vector, and a half-width ortho_extent e. A point p maps to

    horizontal   a = p . right        (right = up x direction)
    vertical     b = p . up
    nearness     q = p . direction

    col = floor((a + e) / 2e * W)     (clipped to the image)
    row = floor((e - b) / 2e * H)
    value = 0.05 + 0.95 * (q + e) / 2e

so occupied pixels live in [0.05, 1.0] with 1.0 the nearest possible point,
and 0 is reserved for background. The per-pixel z-buffer keeps the nearest
point, which under this encoding is a running maximum. Rendering is plain
numpy and deliberately non-differentiable; no gradient ever flows from the
images back into point coordinates.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .geometry import _as_points, farthest_point_sample

VIEW_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z")


@dataclass(frozen=True)
class CameraRig:
    """A fixed set of orthographic views sharing one image size and extent."""

    directions: np.ndarray
    up_vectors: np.ndarray
    image_size: tuple
    ortho_extent: float

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        u = np.asarray(self.up_vectors, dtype=np.float64)
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "up_vectors", u)
        if d.ndim != 2 or d.shape[1] != 3 or u.shape != d.shape:
            raise ValueError("directions and up_vectors must both be (k, 3)")
        if not np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-9):
            raise ValueError("view directions must be unit vectors")
        if not np.allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-9):
            raise ValueError("up vectors must be unit vectors")
        if not np.allclose((d * u).sum(axis=1), 0.0, atol=1e-9):
            raise ValueError("up vectors must be orthogonal to view directions")
        h, w = self.image_size
        if h < 8 or w < 8:
            raise ValueError(f"image size must be at least 8x8, got {h}x{w}")
        if self.ortho_extent <= 0:
            raise ValueError("ortho_extent must be positive")

    @property
    def k(self):
        return self.directions.shape[0]

    def to_dict(self):
        return {
            "directions": self.directions.tolist(),
            "up_vectors": self.up_vectors.tolist(),
            "image_size": list(self.image_size),
            "ortho_extent": self.ortho_extent,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            directions=np.asarray(d["directions"], dtype=np.float64),
            up_vectors=np.asarray(d["up_vectors"], dtype=np.float64),
            image_size=tuple(d["image_size"]),
            ortho_extent=float(d["ortho_extent"]),
        )


@dataclass
class DepthImageGroup:
    """k rendered depth images as one (k, H, W) float array plus their rig."""

    images: np.ndarray
    rig: CameraRig


def build_axis_rig(image_size=(224, 224), ortho_extent=1.05):
    """The six axis-aligned orthographic views in the fixed order +x,-x,+y,-y,+z,-z.

    Up is +z for the four side views and +y for the two along z, so every
    view has a well-defined in-plane frame.
    """
    directions = np.array(
        [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]
    )
    up_vectors = np.array(
        [
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ]
    )
    return CameraRig(
        directions=directions,
        up_vectors=up_vectors,
        image_size=tuple(image_size),
        ortho_extent=float(ortho_extent),
    )


def render_depth(points, rig, splat_radius=1):
    """Render a cloud into one depth image per rig view.

    splat_radius 1 paints exactly one pixel per point; radius r paints the
    (2r-1)^2 square around it, clipped at the image border. Points outside
    the rig's viewing cube are a contract violation, not a clipping case.
    """
    pts = _as_points(points)
    if splat_radius < 1:
        raise ValueError("splat_radius must be at least 1")
    h, w = rig.image_size
    e = rig.ortho_extent
    images = np.zeros((rig.k, h, w), dtype=np.float64)
    for v in range(rig.k):
        d = rig.directions[v]
        u = rig.up_vectors[v]
        r = np.cross(u, d)
        a = pts @ r
        b = pts @ u
        q = pts @ d
        if (np.abs(a) > e).any() or (np.abs(b) > e).any() or (np.abs(q) > e).any():
            raise ValueError("point outside rig extent")
        col = np.clip(np.floor((a + e) / (2.0 * e) * w).astype(np.int64), 0, w - 1)
        row = np.clip(np.floor((e - b) / (2.0 * e) * h).astype(np.int64), 0, h - 1)
        val = 0.05 + 0.95 * (q + e) / (2.0 * e)
        for dy in range(-(splat_radius - 1), splat_radius):
            for dx in range(-(splat_radius - 1), splat_radius):
                rr = np.clip(row + dy, 0, h - 1)
                cc = np.clip(col + dx, 0, w - 1)
                np.maximum.at(images[v], (rr, cc), val)
    return DepthImageGroup(images=images, rig=rig)


def render_teacher_views(gt_points, rig, n_down, splat_radius=1):
    """Downsample a complete cloud with FPS, then render it like any other cloud."""
    pts = _as_points(gt_points)
    if n_down > pts.shape[0]:
        raise ValueError(f"cannot downsample {pts.shape[0]} points to {n_down}")
    return render_depth(farthest_point_sample(pts, n_down), rig, splat_radius=splat_radius)


def save_depth_png(image, path):
    """Write one depth image as 8-bit grayscale, value = round(255 * depth)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("depth values must lie in [0, 1]")
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)
