"""Tests for synthetic scene rendering, PPM I/O, and dataset manifests."""

import numpy as np
import pytest

from sgfi.data import (DatasetManifest, FRAME_NAMES, SceneSpec, ShapeSpec,
                       TripletSample, dataset_scenes, generate_dataset,
                       load_dataset, make_triplet, random_scene, read_ppm,
                       render_scene, write_ppm)


def _static_scene(velocity=(0.0, 0.0), spin=0.0, kind="rect"):
    return SceneSpec(
        height=24, width=24, bg_top=(0.1, 0.2, 0.3), bg_bottom=(0.3, 0.2, 0.1),
        shapes=[ShapeSpec(kind=kind, center=(11.3, 12.7), velocity=velocity,
                          size=(5.0, 7.0), angle=0.4, spin=spin,
                          color=(0.9, 0.8, 0.2))])


# ---------------------------------------------------------------------------
# Rendering


def test_render_shapes_and_range():
    img = render_scene(_static_scene(), 0.0)
    assert img.shape == (3, 24, 24)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_zero_velocity_scene_gives_identical_frames():
    frames = make_triplet(_static_scene())
    assert np.array_equal(frames[0], frames[1])
    assert np.array_equal(frames[1], frames[2])


def test_moving_scene_changes_between_frames():
    frames = make_triplet(_static_scene(velocity=(2.0, -1.5)))
    assert not np.array_equal(frames[0], frames[1])
    assert not np.array_equal(frames[1], frames[2])


def test_rotation_alone_changes_frames():
    frames = make_triplet(_static_scene(spin=0.8))
    assert not np.array_equal(frames[0], frames[2])


def test_render_is_pure_function_of_time():
    scene = _static_scene(velocity=(1.0, 2.0), spin=0.3)
    assert np.array_equal(render_scene(scene, 0.5), render_scene(scene, 0.5))


def test_edges_are_anti_aliased():
    scene = SceneSpec(height=24, width=24, bg_top=(0.0, 0.0, 0.0),
                      bg_bottom=(0.0, 0.0, 0.0),
                      shapes=[ShapeSpec(kind="circle", center=(8.37, 9.81),
                                        velocity=(0.0, 0.0), size=(5.3, 5.3),
                                        angle=0.0, spin=0.0,
                                        color=(1.0, 1.0, 1.0))])
    img = render_scene(scene, 0.0)
    # Interior values are >= 0.5 * coverage 1; background is 0.  Values
    # clearly between the two can only come from fractional coverage.
    rim = (img[0] > 0.02) & (img[0] < 0.45)
    assert rim.sum() > 0


def test_shape_spec_validation():
    with pytest.raises(ValueError):
        ShapeSpec(kind="hexagon", center=(0, 0), velocity=(0, 0),
                  size=(3, 3), angle=0, spin=0, color=(1, 1, 1))
    with pytest.raises(ValueError):
        ShapeSpec(kind="rect", center=(0, 0), velocity=(0, 0),
                  size=(0, 3), angle=0, spin=0, color=(1, 1, 1))


# ---------------------------------------------------------------------------
# PPM I/O


def test_ppm_round_trip_is_exact_at_8_bits(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((3, 9, 13))
    path = tmp_path / "img.ppm"
    write_ppm(path, img)
    back = read_ppm(path)
    quant = np.rint(img * 255.0) / 255.0
    assert np.array_equal(back, quant)


def test_ppm_header_comments_are_skipped(tmp_path):
    payload = bytes(range(24))
    raw = b"P6\n# a comment\n4 2\n# another\n255\n" + payload
    path = tmp_path / "c.ppm"
    path.write_bytes(raw)
    img = read_ppm(path)
    assert img.shape == (3, 2, 4)
    assert np.array_equal(np.rint(img * 255).astype(int).transpose(1, 2, 0),
                          np.frombuffer(payload, np.uint8).reshape(2, 4, 3))


def test_ppm_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ppm"
    path.write_bytes(b"P5\n4 2\n255\n" + bytes(8))
    with pytest.raises(ValueError, match="P6"):
        read_ppm(path)


def test_ppm_rejects_truncated_pixels(tmp_path):
    path = tmp_path / "short.ppm"
    path.write_bytes(b"P6\n4 2\n255\n" + bytes(10))
    with pytest.raises(ValueError, match="truncated"):
        read_ppm(path)


def test_ppm_rejects_wide_maxval(tmp_path):
    path = tmp_path / "wide.ppm"
    path.write_bytes(b"P6\n2 2\n65535\n" + bytes(24))
    with pytest.raises(ValueError, match="8-bit"):
        read_ppm(path)


def test_write_ppm_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        write_ppm(tmp_path / "x.ppm", np.zeros((1, 4, 4)))


# ---------------------------------------------------------------------------
# Dataset generation


def _dir_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_seed_gives_byte_identical_datasets(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate_dataset(a, count=3, height=24, width=24, seed=42)
    generate_dataset(b, count=3, height=24, width=24, seed=42)
    assert _dir_bytes(a) == _dir_bytes(b)


def test_different_seeds_differ(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate_dataset(a, count=2, height=24, width=24, seed=1)
    generate_dataset(b, count=2, height=24, width=24, seed=2)
    assert _dir_bytes(a) != _dir_bytes(b)


def test_middle_frame_matches_independent_rerender(tmp_path):
    root = tmp_path / "ds"
    generate_dataset(root, count=3, height=24, width=32, seed=7)
    scenes = dataset_scenes(count=3, height=24, width=32, seed=7)
    for k, scene in enumerate(scenes):
        stored = read_ppm(root / f"triplet_{k:04d}" / "frame1.ppm")
        rerender = np.rint(render_scene(scene, 0.5) * 255.0) / 255.0
        assert np.array_equal(stored, rerender)


def test_generate_validates_count_and_size(tmp_path):
    with pytest.raises(ValueError, match="count"):
        generate_dataset(tmp_path / "x", count=0, height=24, width=24, seed=0)
    with pytest.raises(ValueError, match="16"):
        generate_dataset(tmp_path / "y", count=1, height=8, width=24, seed=0)


def test_random_scene_respects_shape_budget():
    rng = np.random.default_rng(3)
    for _ in range(20):
        scene = random_scene(rng, 32, 32, max_shapes=4)
        assert 1 <= len(scene.shapes) <= 4
        assert all(s.kind in ("rect", "circle") for s in scene.shapes)


# ---------------------------------------------------------------------------
# Manifests and loading


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest(root=".", triplets=["triplet_0000"], split="val",
                        generator={"seed": 5})
    path = tmp_path / "manifest.json"
    m.save(path)
    back = DatasetManifest.load(path)
    assert back == m


def test_load_dataset_returns_valid_triplets(tmp_path):
    root = tmp_path / "ds"
    manifest = generate_dataset(root, count=2, height=24, width=24, seed=9,
                                split="val")
    assert manifest.split == "val"
    assert manifest.generator["seed"] == 9
    samples = load_dataset(root)
    assert len(samples) == 2
    for s in samples:
        assert s.i0.shape == s.i_gt.shape == s.i1.shape == (3, 24, 24)
        assert s.t == 0.5
        assert s.i0.min() >= 0.0 and s.i0.max() <= 1.0


def test_load_dataset_rejects_missing_frame(tmp_path):
    root = tmp_path / "ds"
    generate_dataset(root, count=2, height=24, width=24, seed=11)
    (root / "triplet_0001" / FRAME_NAMES[2]).unlink()
    with pytest.raises(ValueError, match="missing frame"):
        load_dataset(root)


def test_load_dataset_rejects_mismatched_dims(tmp_path):
    root = tmp_path / "ds"
    generate_dataset(root, count=1, height=24, width=24, seed=13)
    write_ppm(root / "triplet_0000" / FRAME_NAMES[1],
              np.zeros((3, 16, 16)))
    with pytest.raises(ValueError, match="shapes differ"):
        load_dataset(root)


def test_triplet_sample_validates_shapes():
    good = np.zeros((3, 16, 16))
    with pytest.raises(ValueError):
        TripletSample(i0=good, i_gt=np.zeros((3, 16, 17)), i1=good)
