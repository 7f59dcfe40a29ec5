"""Tests for synthetic shape generation, cropping, and PLY round trips."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from vdpcn.dataset import (
    ManifestDataset,
    _allocate_by_area,
    _area_cylinder,
    _area_sphere,
    _sample_cylinder,
    _sample_sphere,
    _sample_torus,
    build_manifest,
    generate_dataset,
    generate_synthetic,
    load_ply,
    make_partial,
    save_ply,
)


def test_generation_is_deterministic():
    a = generate_synthetic(6, seed=77, points_per_shape=512)
    b = generate_synthetic(6, seed=77, points_per_shape=512)
    for (pa, ca), (pb, cb) in zip(a, b):
        assert np.array_equal(pa, pb)
        assert ca == cb


def test_sphere_sampler_stays_on_surface():
    rng = np.random.default_rng(0)
    pts = _sample_sphere(4096, rng, radius=1.0)
    assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-6)


def test_torus_sampler_on_surface():
    rng = np.random.default_rng(1)
    major, minor = 0.8, 0.2
    pts = _sample_torus(2000, rng, major, minor)
    ring = np.sqrt(pts[:, 0] ** 2 + pts[:, 1] ** 2)
    tube = np.sqrt((ring - major) ** 2 + pts[:, 2] ** 2)
    assert_allclose(tube, minor, atol=1e-9)


def test_cylinder_side_cap_split_tracks_area():
    """Fraction of points on the side wall approximates its area share."""
    rng = np.random.default_rng(2)
    radius, height = 0.5, 1.5
    pts = _sample_cylinder(20000, rng, radius, height)
    on_cap = np.isclose(np.abs(pts[:, 2]), height / 2.0)
    side_share = 1.0 - on_cap.mean()
    want = 2 * np.pi * radius * height / _area_cylinder(radius, height)
    assert side_share == pytest.approx(want, abs=0.02)


def test_area_allocation_within_five_percent():
    """Composite samplers allocate points by analytic surface area."""
    areas = [_area_sphere(1.0), _area_sphere(2.0)]  # ratio 1:4
    counts = _allocate_by_area(10000, areas)
    assert counts.sum() == 10000
    for c, a in zip(counts, areas):
        share = a / sum(areas)
        assert abs(c / 10000 - share) < 0.05 * share


def test_generated_shapes_are_normalized():
    for pts, _ in generate_synthetic(6, seed=3, points_per_shape=256):
        assert_allclose(pts.mean(axis=0), np.zeros(3), atol=1e-6)
        assert np.linalg.norm(pts, axis=1).max() == pytest.approx(1.0, abs=1e-6)


def test_make_partial_hard_crop_counts():
    gt, _ = generate_synthetic(1, seed=5, points_per_shape=8192)[0]
    partial = make_partial(gt, "H", seed=9, input_size=2048)
    assert partial.shape[0] == 2048  # 75% of 8192 removed leaves exactly 2048


def test_make_partial_nested_crops():
    """The easy crop keeps a superset of the hard crop for the same seed."""
    gt, _ = generate_synthetic(1, seed=5, points_per_shape=1024)[0]
    easy = make_partial(gt, "S", seed=4, input_size=None)
    hard = make_partial(gt, "H", seed=4, input_size=None)
    easy_set = set(map(tuple, easy))
    assert all(tuple(p) in easy_set for p in hard)


def test_make_partial_small_remainder_kept_whole():
    gt, _ = generate_synthetic(1, seed=6, points_per_shape=512)[0]
    partial = make_partial(gt, "H", seed=1, input_size=2048)
    assert partial.shape[0] == 512 - round(512 * 0.75)


def test_ply_binary_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(10)
    pts = rng.normal(size=(100, 3))
    path = tmp_path / "cloud.ply"
    save_ply(pts, path, binary=True)
    assert np.array_equal(load_ply(path), pts)


def test_ply_ascii_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    pts = rng.normal(size=(50, 3))
    path = tmp_path / "cloud.ply"
    save_ply(pts, path, binary=False)
    assert_allclose(load_ply(path), pts, atol=1e-6)


def test_ply_reader_ignores_extra_properties(tmp_path):
    path = tmp_path / "extra.ply"
    body = "\n".join(["1 2 3 255 0", "4 5 6 0 255"])
    text = (
        "ply\nformat ascii 1.0\ncomment colored cloud\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nend_header\n" + body + "\n"
    )
    path.write_text(text)
    assert_allclose(load_ply(path), np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))


def test_ply_truncated_body_names_counts(tmp_path):
    path = tmp_path / "short.ply"
    text = (
        "ply\nformat ascii 1.0\nelement vertex 5\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n"
        "0 0 0\n1 1 1\n"
    )
    path.write_text(text)
    with pytest.raises(ValueError, match="expected 5 vertices, found 2"):
        load_ply(path)


def test_ply_malformed_headers(tmp_path):
    not_ply = tmp_path / "a.ply"
    not_ply.write_text("off\n1 2 3\n")
    with pytest.raises(ValueError, match="not a PLY"):
        load_ply(not_ply)

    missing_z = tmp_path / "b.ply"
    missing_z.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n"
    )
    with pytest.raises(ValueError, match="missing property 'z'"):
        load_ply(missing_z)

    bad_format = tmp_path / "c.ply"
    bad_format.write_text("ply\nformat binary_big_endian 1.0\nend_header\n")
    with pytest.raises(ValueError, match="unsupported PLY format"):
        load_ply(bad_format)


def test_build_manifest_split_and_determinism(tmp_path):
    paths = generate_dataset(tmp_path, n_shapes=40, seed=12, points_per_shape=128, split_fraction=0.8)
    train = ManifestDataset(paths["train"], input_size=64)
    test = ManifestDataset(paths["test"], input_size=64)
    assert len(train) == 32
    assert len(test) == 8

    again = build_manifest(tmp_path, split_fraction=0.8, seed=12)
    assert (tmp_path / "manifest_train.json").read_bytes() == again["train"].read_bytes()

    ids = {s["id"] for s in train.entries} | {s["id"] for s in test.entries}
    assert len(ids) == 40


def test_manifest_missing_file_error(tmp_path):
    paths = generate_dataset(tmp_path, n_shapes=5, seed=1, points_per_shape=64, split_fraction=0.6)
    victim = next(tmp_path.glob("shape_0000*.ply"))
    victim.unlink()
    with pytest.raises(ValueError, match="missing"):
        ManifestDataset(paths["train"], input_size=32)
        ManifestDataset(paths["test"], input_size=32)


def test_loaded_samples_satisfy_contracts(tmp_path):
    paths = generate_dataset(tmp_path, n_shapes=6, seed=8, points_per_shape=1024, split_fraction=0.5)
    ds = ManifestDataset(paths["train"], input_size=256, validate=True)
    for i in range(len(ds)):
        s = ds[i]
        assert s.partial.shape[0] <= s.gt.shape[0]
        gt_set = set(map(tuple, s.gt))
        assert all(tuple(p) in gt_set for p in s.partial)
