import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vbplupi import data
from vbplupi.data import DatasetConfig

seeds = st.integers(0, 2**31 - 1)


def test_no_clutter_background_and_mask():
    cfg = DatasetConfig(num_samples=20, clutter_density=0.0)
    for i in range(20):
        s = data.generate_sample(cfg, i)
        fg = s.seg_mask[0] > 0
        bg_values = s.image[:, ~fg]
        assert np.all(bg_values == bg_values[0, 0])
        assert np.all(s.image[:, fg] > cfg.background_intensity[1])
        assert not s.clutter_mask.any()


@given(seeds, st.integers(0, 49))
def test_generation_is_deterministic(seed, index):
    cfg = DatasetConfig(num_samples=50, seed=seed)
    a, b = data.generate_sample(cfg, index), data.generate_sample(cfg, index)
    for field in ("image", "seg_mask", "labels", "clutter_mask"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    assert a.id == b.id == f"s{index:06d}"


@given(seeds, st.integers(0, 29))
def test_sample_invariants(seed, index):
    cfg = DatasetConfig(num_samples=30, seed=seed)
    s = data.generate_sample(cfg, index)
    assert s.image.shape == (3, 16, 16) and s.seg_mask.shape == (1, 16, 16)
    assert 0 <= s.image.min() and s.image.max() <= 1
    assert set(np.unique(s.seg_mask)) <= {0.0, 1.0}
    assert 1 <= s.labels.sum() <= cfg.num_classes
    assert not (s.clutter_mask * s.seg_mask).any()  # clutter never covers an object


def test_label_frequencies_within_three_sigma():
    cfg = DatasetConfig(num_samples=10_000, image_size=12, clutter_density=0.0, min_size=1, max_size=2,
                        presence_prob=(0.2, 0.4, 0.6))
    labels = np.stack([data.generate_sample(cfg, i).labels for i in range(cfg.num_samples)])
    p = data.expected_label_frequencies(cfg)
    sigma = np.sqrt(p * (1 - p) / cfg.num_samples)
    assert np.all(np.abs(labels.mean(axis=0) - p) <= 3 * sigma)


def test_clutter_follows_present_class():
    # with correlation 1 the clutter angle always matches a present class
    cfg = DatasetConfig(num_samples=200, clutter_correlation=1.0, clutter_density=0.5)
    hits = 0
    for i in range(cfg.num_samples):
        s = data.generate_sample(cfg, i)
        hits += s.clutter_mask.any()
    assert hits > 150


@pytest.mark.parametrize("kwargs,msg", [
    ({"splits": (0.5, 0.5, 0.5)}, "splits"),
    ({"max_size": 8}, "shapes too large"),
    ({"num_classes": 4}, "shape names"),
    ({"clutter_style": "blobs"}, "clutter_style"),
    ({"object_intensity": (0.1, 0.9)}, "brighter"),
    ({"presence_prob": (0.5,)}, "presence_prob"),
])
def test_config_validation(kwargs, msg):
    with pytest.raises(ValueError, match=msg):
        DatasetConfig(**kwargs)


def test_split_arithmetic():
    cfg = DatasetConfig(num_samples=10)
    assert data.split_counts(cfg) == (8, 1, 1)
    assert [data.split_of(cfg, i) for i in range(10)] == ["train"] * 8 + ["val", "test"]


def test_bbox_of_disk_is_circumscribing_square():
    r = 3
    disk = data.shape_mask("disk", 15, 7, 7, r)[None].astype(float)
    box = data.corrupt_mask_bbox(disk)
    expected = np.zeros((1, 15, 15))
    expected[0, 7 - r:7 + r + 1, 7 - r:7 + r + 1] = 1
    np.testing.assert_array_equal(box, expected)


@given(st.integers(0, 5), st.integers(0, 5), st.integers(1, 4), st.integers(1, 4))
def test_bbox_fixed_point_on_rectangles(y, x, h, w):
    m = np.zeros((1, 10, 10))
    m[0, y:y + h, x:x + w] = 1
    np.testing.assert_array_equal(data.corrupt_mask_bbox(m), m)


@given(arrays(np.float64, (1, 8, 8), elements=st.sampled_from([0.0, 1.0])))
def test_bbox_contains_mask_and_is_idempotent(m):
    box = data.corrupt_mask_bbox(m)
    assert np.all(box >= m)
    # boxes of separate components may merge into a new component, so a second pass can only grow
    assert np.all(data.corrupt_mask_bbox(box) >= box)


def test_bbox_empty():
    assert not data.corrupt_mask_bbox(np.zeros((1, 5, 5))).any()


def test_quantize_half_to_even():
    assert data.quantize(np.array([0.5]))[0] == 128
    assert data.quantize(np.array([0.0, 1.0])).tolist() == [0, 255]
    with pytest.raises(ValueError):
        data.quantize(np.array([1.5]))


def test_pgm_header_parse(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(range(16)))
    img = data.read_pgm(p)
    assert img.shape == (1, 4, 4) and img[0, 3, 3] == 15 / 255


def test_pgm_comments_allowed(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1 255\n\x00\xff")
    np.testing.assert_array_equal(data.read_pgm(p), [[[0.0, 1.0]]])


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_pgm_ppm_round_trip_is_exact(h, w, seed):
    import tempfile, os
    rng = np.random.default_rng(seed)
    gray = rng.integers(0, 256, size=(1, h, w)) / 255.0
    rgb = rng.integers(0, 256, size=(3, h, w)) / 255.0
    with tempfile.TemporaryDirectory() as d:
        data.write_pgm(gray, os.path.join(d, "g.pgm"))
        data.write_ppm(rgb, os.path.join(d, "c.ppm"))
        np.testing.assert_array_equal(data.read_pgm(os.path.join(d, "g.pgm")), gray)
        np.testing.assert_array_equal(data.read_image(os.path.join(d, "c.ppm")), rgb)


def test_zero_mask_round_trip(tmp_path):
    data.write_pgm(np.zeros((1, 3, 5)), tmp_path / "z.pgm")
    np.testing.assert_array_equal(data.read_pgm(tmp_path / "z.pgm"), np.zeros((1, 3, 5)))


@pytest.mark.parametrize("payload,err", [
    (b"P6\n2 2\n255\n" + bytes(12), data.MalformedHeaderError),
    (b"P5\n2 x\n255\n" + bytes(4), data.MalformedHeaderError),
    (b"P5\n2 2\n65535\n" + bytes(8), data.MalformedHeaderError),
    (b"P5\n0 2\n255\n", data.MalformedHeaderError),
    (b"P5\n2 2", data.MalformedHeaderError),
    (b"P5\n40000 2\n255\n", data.DimensionOverflowError),
    (b"P5\n4 4\n255\n" + bytes(10), data.TruncatedPayloadError),
])
def test_pgm_errors(tmp_path, payload, err):
    p = tmp_path / "bad.pgm"
    p.write_bytes(payload)
    with pytest.raises(err):
        data.read_pgm(p)


def test_manifest_build_and_read(tmp_path):
    cfg = DatasetConfig(num_samples=10, seed=3)
    path = data.build_manifest(cfg, str(tmp_path / "ds"))
    lines = open(path).read().splitlines()
    assert len(lines) == 10
    splits = [line.split("\t")[4] for line in lines]
    assert splits.count("train") == 8 and splits.count("val") == 1 and splits.count("test") == 1
    assert all(len(line.split("\t")[3]) == cfg.num_classes for line in lines)
    rows = data.read_manifest(path, "train")
    assert len(rows) == 8
    s = data.generate_sample(cfg, 0)
    np.testing.assert_array_equal(rows[0].labels, s.labels)
    np.testing.assert_array_equal(data.read_pgm(rows[0].mask), s.seg_mask)
    assert np.abs(data.read_ppm(rows[0].image) - s.image).max() <= 0.5 / 255 + 1e-12


def test_manifest_regeneration_is_byte_identical(tmp_path):
    cfg = DatasetConfig(num_samples=6, seed=1)
    a = data.build_manifest(cfg, str(tmp_path / "a"))
    b = data.build_manifest(cfg, str(tmp_path / "b"))
    assert open(a, "rb").read() == open(b, "rb").read()
    for sub in ("images/s000003.ppm", "masks/s000003.pgm"):
        assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()


def test_malformed_manifest(tmp_path):
    p = tmp_path / "manifest.tsv"
    p.write_text("s000000\timages/a.ppm\tmasks/a.pgm\t01x\ttrain\n")
    with pytest.raises(ValueError, match="malformed"):
        data.read_manifest(str(p))
