"""Synthetic shape generation, partial-view cropping, and point cloud I/O.

The training data is procedurally generated: spheres, boxes, cylinders, tori,
and small composites of those, sampled uniformly by surface area. Everything
is deterministic given the dataset seed, so two machines produce bit-identical
files. PLY (ASCII and binary little-endian) is the on-disk format.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import farthest_point_sample, knn_crop, normalize_to_unit

DIFFICULTY_RATIOS = {"S": 0.25, "M": 0.50, "H": 0.75}

MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# surface samplers
#
# Each sampler draws n points uniformly on the surface of one primitive and
# has a matching analytic area so composites can allocate points by area.


def _sample_sphere(n, rng, radius=1.0):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius


def _area_sphere(radius):
    return 4.0 * np.pi * radius**2


def _sample_box(n, rng, half_extents):
    hx, hy, hz = half_extents
    # face areas: two faces per axis
    areas = np.array([4 * hy * hz, 4 * hy * hz, 4 * hx * hz, 4 * hx * hz, 4 * hx * hy, 4 * hx * hy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=n)
    v = rng.uniform(-1.0, 1.0, size=n)
    pts = np.empty((n, 3))
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    axis = face // 2
    for ax in range(3):
        m = axis == ax
        o1, o2 = [a for a in range(3) if a != ax]
        he = (hx, hy, hz)
        pts[m, ax] = sign[m] * he[ax]
        pts[m, o1] = u[m] * he[o1]
        pts[m, o2] = v[m] * he[o2]
    return pts


def _area_box(half_extents):
    hx, hy, hz = half_extents
    return 8.0 * (hx * hy + hy * hz + hx * hz)


def _sample_cylinder(n, rng, radius, height):
    side_area = 2.0 * np.pi * radius * height
    cap_area = np.pi * radius**2
    total = side_area + 2.0 * cap_area
    which = rng.choice(3, size=n, p=[side_area / total, cap_area / total, cap_area / total])
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    side = which == 0
    pts[side, 0] = radius * np.cos(theta[side])
    pts[side, 1] = radius * np.sin(theta[side])
    pts[side, 2] = rng.uniform(-height / 2.0, height / 2.0, size=side.sum())
    for cap_idx, z in ((1, height / 2.0), (2, -height / 2.0)):
        m = which == cap_idx
        rr = radius * np.sqrt(rng.uniform(0.0, 1.0, size=m.sum()))
        pts[m, 0] = rr * np.cos(theta[m])
        pts[m, 1] = rr * np.sin(theta[m])
        pts[m, 2] = z
    return pts


def _area_cylinder(radius, height):
    return 2.0 * np.pi * radius * height + 2.0 * np.pi * radius**2


def _sample_torus(n, rng, major, minor):
    # uniform area needs rejection on the tube angle: dA ~ (R + r cos t)
    pts = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = n - filled
        t = rng.uniform(0.0, 2.0 * np.pi, size=2 * m)
        accept = rng.uniform(0.0, 1.0, size=2 * m) < (major + minor * np.cos(t)) / (major + minor)
        t = t[accept][:m]
        phi = rng.uniform(0.0, 2.0 * np.pi, size=t.shape[0])
        ring = major + minor * np.cos(t)
        chunk = np.stack([ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(t)], axis=1)
        pts[filled : filled + chunk.shape[0]] = chunk
        filled += chunk.shape[0]
    return pts


def _area_torus(major, minor):
    return 4.0 * np.pi**2 * major * minor


def _allocate_by_area(n, areas):
    """Largest-remainder allocation of n points proportional to surface areas."""
    areas = np.asarray(areas, dtype=np.float64)
    exact = n * areas / areas.sum()
    counts = np.floor(exact).astype(np.int64)
    short = n - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _random_primitive(rng):
    """One primitive spec (sampler closure, analytic area) with random size."""
    kind = rng.choice(["sphere", "box", "cylinder", "torus"])
    if kind == "sphere":
        radius = rng.uniform(0.4, 1.0)
        return (lambda n, r: _sample_sphere(n, r, radius)), _area_sphere(radius)
    if kind == "box":
        he = rng.uniform(0.3, 1.0, size=3)
        return (lambda n, r: _sample_box(n, r, he)), _area_box(he)
    if kind == "cylinder":
        radius = rng.uniform(0.3, 0.8)
        height = rng.uniform(0.6, 2.0)
        return (lambda n, r: _sample_cylinder(n, r, radius, height)), _area_cylinder(radius, height)
    major = rng.uniform(0.5, 0.9)
    minor = rng.uniform(0.15, 0.35) * major
    return (lambda n, r: _sample_torus(n, r, major, minor)), _area_torus(major, minor)


CATEGORY_CYCLE = ("sphere", "box", "cylinder", "torus", "composite2", "composite3")


def sample_category(category, n_points, rng):
    """Sample one raw (un-normalized) surface cloud of the given category."""
    if category == "sphere":
        return _sample_sphere(n_points, rng, radius=rng.uniform(0.4, 1.0))
    if category == "box":
        return _sample_box(n_points, rng, rng.uniform(0.3, 1.0, size=3))
    if category == "cylinder":
        return _sample_cylinder(n_points, rng, rng.uniform(0.3, 0.8), rng.uniform(0.6, 2.0))
    if category == "torus":
        major = rng.uniform(0.5, 0.9)
        return _sample_torus(n_points, rng, major, rng.uniform(0.15, 0.35) * major)
    if category in ("composite2", "composite3"):
        n_parts = 2 if category == "composite2" else 3
        samplers, areas, offsets = [], [], []
        for _ in range(n_parts):
            fn, area = _random_primitive(rng)
            samplers.append(fn)
            areas.append(area)
            offsets.append(rng.uniform(-0.8, 0.8, size=3))
        counts = _allocate_by_area(n_points, areas)
        parts = [fn(c, rng) + off for fn, c, off in zip(samplers, counts, offsets)]
        return np.concatenate(parts, axis=0)
    raise ValueError(f"unknown category {category!r}")


def generate_synthetic(n_shapes, seed, points_per_shape=8192):
    """Generate n_shapes normalized ground-truth clouds with category tags.

    Shape i is drawn from an independent generator seeded by (seed, i), so
    the set regenerates identically for a fixed seed regardless of order.
    """
    if n_shapes < 1:
        raise ValueError("n_shapes must be at least 1")
    shapes = []
    for i in range(n_shapes):
        rng = np.random.default_rng([seed, i])
        category = CATEGORY_CYCLE[i % len(CATEGORY_CYCLE)]
        raw = sample_category(category, points_per_shape, rng)
        pts, _ = normalize_to_unit(raw)
        shapes.append((pts, category))
    return shapes


def make_partial(gt_points, difficulty, seed, input_size=2048):
    """Crop a complete cloud to a partial observation of the given difficulty.

    A seed direction on the unit sphere (deterministic in seed) picks the
    crop center; the difficulty ratio of nearest points is removed, and the
    remainder is FPS-resampled to input_size. input_size None skips the
    resampling; a remainder smaller than input_size is kept whole.
    """
    if difficulty not in DIFFICULTY_RATIOS:
        raise ValueError(f"difficulty must be one of S, M, H, got {difficulty!r}")
    rng = np.random.default_rng(seed)
    v = rng.normal(size=3)
    seed_point = v / np.linalg.norm(v)
    partial, _ = knn_crop(gt_points, seed_point, DIFFICULTY_RATIOS[difficulty])
    if input_size is None or partial.shape[0] <= input_size:
        return partial
    return farthest_point_sample(partial, input_size)


# ---------------------------------------------------------------------------
# PLY I/O

_PLY_DTYPES = {
    "char": "i1",
    "uchar": "u1",
    "int8": "i1",
    "uint8": "u1",
    "short": "i2",
    "ushort": "u2",
    "int16": "i2",
    "uint16": "u2",
    "int": "i4",
    "uint": "u4",
    "int32": "i4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}


def save_ply(points, path, binary=False):
    """Write an (N, 3) cloud as a PLY file with double x/y/z properties.

    Binary files round-trip bit-exactly; ASCII uses %.17g which also
    preserves every float64 exactly.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {pts.shape[0]}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "end_header\n"
    )
    path = Path(path)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(pts.astype("<f8").tobytes())
        else:
            lines = ["%.17g %.17g %.17g" % tuple(row) for row in pts]
            f.write(("\n".join(lines) + "\n").encode("ascii"))


def load_ply(path):
    """Read x, y, z vertex coordinates from an ASCII or binary_little_endian PLY.

    Extra vertex properties are parsed and discarded; elements after the
    vertex block are ignored. Malformed headers, missing coordinate
    properties, and truncated bodies raise ValueError with specifics.
    """
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()

    magic, _, rest = data.partition(b"\n")
    if magic.strip() != b"ply":
        raise ValueError(f"{path}: not a PLY file (missing 'ply' magic)")

    fmt = None
    n_vertex = None
    properties = []  # (name, type) for the vertex element only
    in_vertex_element = False
    offset = len(magic) + 1
    while True:
        line, _, rest = rest.partition(b"\n")
        offset += len(line) + 1
        tokens = line.decode("ascii", errors="replace").strip().split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise ValueError(f"{path}: unsupported PLY format line {line!r}")
            fmt = tokens[1]
        elif tokens[0] == "element":
            in_vertex_element = tokens[1] == "vertex"
            if in_vertex_element:
                n_vertex = int(tokens[2])
        elif tokens[0] == "property" and in_vertex_element:
            if tokens[1] == "list":
                raise ValueError(f"{path}: list properties on vertices are not supported")
            if tokens[1] not in _PLY_DTYPES:
                raise ValueError(f"{path}: unknown property type {tokens[1]!r}")
            properties.append((tokens[2], _PLY_DTYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
        if not rest and tokens[0] != "end_header":
            raise ValueError(f"{path}: header never terminated with end_header")

    if fmt is None:
        raise ValueError(f"{path}: header has no format line")
    if n_vertex is None:
        raise ValueError(f"{path}: header declares no vertex element")
    names = [name for name, _ in properties]
    for needed in ("x", "y", "z"):
        if needed not in names:
            raise ValueError(f"{path}: vertex element missing property {needed!r}")

    body = data[offset:]
    if fmt == "binary_little_endian":
        row_dtype = np.dtype([(name, "<" + dt) for name, dt in properties])
        need = n_vertex * row_dtype.itemsize
        if len(body) < need:
            found = len(body) // row_dtype.itemsize
            raise ValueError(f"{path}: truncated body, expected {n_vertex} vertices, found {found}")
        rows = np.frombuffer(body[:need], dtype=row_dtype)
        pts = np.stack([rows["x"], rows["y"], rows["z"]], axis=1).astype(np.float64)
    else:
        lines = body.split(b"\n")
        rows = []
        for line in lines:
            if line.strip():
                rows.append(line.split())
            if len(rows) == n_vertex:
                break
        if len(rows) < n_vertex:
            raise ValueError(f"{path}: truncated body, expected {n_vertex} vertices, found {len(rows)}")
        ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
        pts = np.empty((n_vertex, 3), dtype=np.float64)
        for i, row in enumerate(rows):
            if len(row) < len(names):
                raise ValueError(f"{path}: vertex row {i} has {len(row)} values, expected {len(names)}")
            pts[i] = (float(row[ix]), float(row[iy]), float(row[iz]))
    return pts


# ---------------------------------------------------------------------------
# manifests and samples


@dataclass
class Sample:
    """One training or evaluation example."""

    id: str
    category: str
    partial: np.ndarray
    gt: np.ndarray
    difficulty: str
    seed: int


def write_shape_files(shapes, root, binary=True):
    """Save generated (points, category) pairs as PLY files under root."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    files = []
    for i, (pts, category) in enumerate(shapes):
        name = f"shape_{i:04d}_{category}.ply"
        save_ply(pts, root / name, binary=binary)
        files.append(name)
    return files


def build_manifest(root, split_fraction=0.8, seed=0, difficulties=("S", "M", "H")):
    """Split the PLY files under root into train/test manifests.

    The split is a seeded shuffle; difficulty cycles through the given
    levels and each sample gets its own crop seed, both deterministic in the
    manifest seed. Returns {"train": path, "test": path}.
    """
    root = Path(root)
    files = sorted(p.name for p in root.glob("*.ply"))
    if not files:
        raise ValueError(f"no PLY files found under {root}")
    missing = [f for f in files if not (root / f).exists()]
    if missing:
        raise ValueError(f"missing shape files: {missing}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(files))
    n_train = int(round(len(files) * split_fraction))
    splits = {"train": order[:n_train], "test": order[n_train:]}
    paths = {}
    for split, idx in splits.items():
        samples = []
        for j, i in enumerate(sorted(idx.tolist())):
            fname = files[i]
            category = fname[:-4].split("_", 2)[2] if fname.count("_") >= 2 else "unknown"
            samples.append(
                {
                    "id": fname[:-4],
                    "category": category,
                    "gt_file": fname,
                    "difficulty": difficulties[j % len(difficulties)],
                    "seed": int(seed * 100003 + i),
                }
            )
        doc = {"version": MANIFEST_VERSION, "split": split, "samples": samples}
        path = root / f"manifest_{split}.json"
        with open(path, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        paths[split] = path
    return paths


def generate_dataset(root, n_shapes, seed, points_per_shape=8192, split_fraction=0.8):
    """Generate shapes, write PLYs, and build both manifests under root."""
    shapes = generate_synthetic(n_shapes, seed, points_per_shape)
    write_shape_files(shapes, root)
    return build_manifest(root, split_fraction=split_fraction, seed=seed)


def synthetic_samples(n_shapes, seed, points_per_shape=8192, input_size=2048, difficulties=("S", "M", "H")):
    """Generate a fully in-memory sample list, no files involved.

    Convenient for tests and small experiments; the same generator drives
    the on-disk path, so ids and geometry match generate_dataset output for
    equal parameters.
    """
    shapes = generate_synthetic(n_shapes, seed, points_per_shape)
    samples = []
    for i, (gt, category) in enumerate(shapes):
        difficulty = difficulties[i % len(difficulties)]
        crop_seed = int(seed * 100003 + i)
        partial = make_partial(gt, difficulty, crop_seed, input_size)
        samples.append(
            Sample(
                id=f"shape_{i:04d}_{category}",
                category=category,
                partial=partial,
                gt=gt,
                difficulty=difficulty,
                seed=crop_seed,
            )
        )
    return samples


class ManifestDataset:
    """Loads samples listed in a manifest, cropping partials on the fly."""

    def __init__(self, manifest_path, input_size=2048, validate=False):
        self.manifest_path = Path(manifest_path)
        with open(self.manifest_path) as f:
            doc = json.load(f)
        if doc.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {doc.get('version')!r}")
        self.split = doc["split"]
        self.entries = doc["samples"]
        self.root = self.manifest_path.parent
        self.input_size = input_size
        missing = [e["gt_file"] for e in self.entries if not (self.root / e["gt_file"]).exists()]
        if missing:
            raise ValueError(f"manifest references missing files: {missing}")
        self.validate = validate
        self._cache = {}

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        entry = self.entries[i]
        if entry["id"] not in self._cache:
            gt = load_ply(self.root / entry["gt_file"])
            if self.validate:
                centroid = gt.mean(axis=0)
                radius = np.linalg.norm(gt, axis=1).max()
                if np.abs(centroid).max() > 1e-6 or abs(radius - 1.0) > 1e-6:
                    raise ValueError(f"{entry['gt_file']}: stored cloud is not normalized")
            partial = make_partial(gt, entry["difficulty"], entry["seed"], self.input_size)
            self._cache[entry["id"]] = (gt, partial)
        gt, partial = self._cache[entry["id"]]
        return Sample(
            id=entry["id"],
            category=entry["category"],
            partial=partial,
            gt=gt,
            difficulty=entry["difficulty"],
            seed=entry["seed"],
        )
