import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rank1fnn.data import (
    BadMagicError,
    DataError,
    LabeledDataset,
    NonFiniteDataError,
    TruncatedDataError,
    extract_patches,
    generate_synthetic,
    load_cube,
    load_labels,
    load_patch_set,
    normalize_bands,
    per_class_split,
    save_cube,
    save_labels,
    save_patch_set,
    select_classes,
)


def cube_5x5x3():
    return np.arange(75, dtype=np.float64).reshape(5, 5, 3)


class TestCubeIO:
    def test_round_trip(self, tmp_path):
        cube = np.random.default_rng(0).standard_normal((4, 3, 5)).astype(np.float32).astype(np.float64)
        save_cube(cube, tmp_path / "c.hsc")
        np.testing.assert_array_equal(load_cube(tmp_path / "c.hsc"), cube)
        save_cube(load_cube(tmp_path / "c.hsc"), tmp_path / "d.hsc")
        assert (tmp_path / "c.hsc").read_bytes() == (tmp_path / "d.hsc").read_bytes()

    def test_layout(self, tmp_path):
        cube = np.arange(12, dtype=np.float64).reshape(2, 3, 2)
        save_cube(cube, tmp_path / "c.hsc")
        raw = (tmp_path / "c.hsc").read_bytes()
        assert raw[:4] == b"HSC1"
        assert struct.unpack("<3I", raw[4:16]) == (2, 3, 2)
        # row, then col, then band, band fastest
        assert struct.unpack("<12f", raw[16:]) == tuple(float(v) for v in range(12))

    def test_single_entry(self, tmp_path):
        (tmp_path / "c.hsc").write_bytes(b"HSC1" + struct.pack("<3I", 1, 1, 1) + struct.pack("<f", 7.5))
        cube = load_cube(tmp_path / "c.hsc")
        assert cube.shape == (1, 1, 1) and cube[0, 0, 0] == 7.5

    def test_truncated(self, tmp_path):
        (tmp_path / "c.hsc").write_bytes(b"HSC1" + struct.pack("<3I", 2, 2, 1) + struct.pack("<3f", 1, 2, 3))
        with pytest.raises(TruncatedDataError):
            load_cube(tmp_path / "c.hsc")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "c.hsc").write_bytes(b"XXXX" + struct.pack("<3I", 1, 1, 1) + struct.pack("<f", 1))
        with pytest.raises(BadMagicError):
            load_cube(tmp_path / "c.hsc")

    def test_non_finite(self, tmp_path):
        (tmp_path / "c.hsc").write_bytes(b"HSC1" + struct.pack("<3I", 1, 1, 2) + struct.pack("<2f", 1, float("nan")))
        with pytest.raises(NonFiniteDataError):
            load_cube(tmp_path / "c.hsc")

    def test_error_kinds_distinct(self):
        kinds = {BadMagicError, TruncatedDataError, NonFiniteDataError}
        assert all(issubclass(k, DataError) for k in kinds)
        assert len(kinds) == 3


class TestLabels:
    def test_round_trip(self, tmp_path):
        labels = [(1, 2, 1), (3, 3, 2)]
        save_labels(labels, tmp_path / "l.csv")
        assert (tmp_path / "l.csv").read_text().splitlines()[0] == "row,col,class"
        assert load_labels(tmp_path / "l.csv") == labels

    def test_bad_header(self, tmp_path):
        (tmp_path / "l.csv").write_text("x,y,z\n1,1,1\n")
        with pytest.raises(DataError):
            load_labels(tmp_path / "l.csv")


class TestNormalizeBands:
    def test_min_max(self):
        cube = np.array([2.0, 4.0, 6.0]).reshape(1, 3, 1)
        np.testing.assert_array_equal(normalize_bands(cube).ravel(), [0, 0.5, 1])

    def test_constant_band(self):
        np.testing.assert_array_equal(normalize_bands(np.full((2, 2, 1), 3.0)), 0)

    def test_already_normalized(self):
        cube = np.array([0.0, 0.25, 1.0, 0.5]).reshape(2, 2, 1)
        np.testing.assert_array_equal(normalize_bands(cube), cube)

    def test_bands_independent(self):
        cube = np.stack([np.arange(4.0).reshape(2, 2), 10 * np.arange(4.0).reshape(2, 2)], axis=-1)
        out = normalize_bands(cube)
        np.testing.assert_array_equal(out[..., 0], out[..., 1])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_range_and_idempotence(self, seed, scale):
        cube = np.random.default_rng(seed).standard_normal((3, 4, 2)) * scale
        once = normalize_bands(cube)
        assert once.min() >= 0 and once.max() <= 1
        np.testing.assert_allclose(normalize_bands(once), once, rtol=0, atol=1e-15)


class TestExtractPatches:
    def test_center(self):
        cube = cube_5x5x3()
        ds = extract_patches(cube, [(3, 3, 1)], s=3)
        assert len(ds) == 1 and ds.dims == (3, 3, 3)
        np.testing.assert_array_equal(ds.samples[0], cube[1:4, 1:4, :])
        np.testing.assert_array_equal(ds.targets, [[1.0]])

    def test_corner_excluded(self):
        ds = extract_patches(cube_5x5x3(), [(1, 1, 1)], s=3)
        assert len(ds) == 0

    def test_single_pixel_patch(self):
        cube = cube_5x5x3()
        labels = [(1, 1, 1), (5, 5, 2), (2, 4, 1)]
        ds = extract_patches(cube, labels, s=1)
        assert len(ds) == 3 and ds.dims == (1, 1, 3)
        # row-major order: (1,1), (2,4), (5,5)
        np.testing.assert_array_equal(ds.samples[1, 0, 0], cube[1, 3])
        np.testing.assert_array_equal(ds.labels, [0, 0, 1])

    def test_even_side_rejected(self):
        with pytest.raises(ValueError):
            extract_patches(cube_5x5x3(), [(3, 3, 1)], s=2)

    def test_out_of_bounds_label(self):
        with pytest.raises(DataError):
            extract_patches(cube_5x5x3(), [(6, 1, 1)], s=1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3, 5]))
    def test_count_and_centers(self, seed, s):
        rng = np.random.default_rng(seed)
        H, W = rng.integers(1, 9, size=2)
        cube = rng.standard_normal((H, W, 2))
        pixels = [(r, c) for r in range(1, H + 1) for c in range(1, W + 1) if rng.random() < 0.5]
        labels = [(r, c, int(rng.integers(1, 4))) for r, c in pixels]
        ds = extract_patches(cube, labels, s=s, n_classes=3)
        half = s // 2
        inside = [(r, c) for r, c in pixels if half < r <= H - half and half < c <= W - half]
        assert len(ds) == len(inside)
        for sample, (r, c) in zip(ds.samples, sorted(inside)):
            np.testing.assert_array_equal(sample[half, half], cube[r - 1, c - 1])


class TestPerClassSplit:
    def make(self, counts):
        labels = np.repeat(np.arange(len(counts)), counts)
        return LabeledDataset(np.arange(len(labels), dtype=float)[:, None], labels, len(counts))

    def test_arithmetic(self):
        train, test = per_class_split(self.make([100, 80]), 50, seed=0)
        np.testing.assert_array_equal(train.histogram, [50, 50])
        np.testing.assert_array_equal(test.histogram, [50, 30])

    def test_boundary(self):
        train, test = per_class_split(self.make([10, 30]), 10, seed=0)
        np.testing.assert_array_equal(test.histogram, [0, 20])

    def test_deterministic(self):
        ds = self.make([20, 20, 20])
        a, b = per_class_split(ds, 5, seed=3), per_class_split(ds, 5, seed=3)
        np.testing.assert_array_equal(a[0].samples, b[0].samples)
        np.testing.assert_array_equal(a[1].samples, b[1].samples)

    def test_insufficient(self):
        with pytest.raises(DataError):
            per_class_split(self.make([10, 3]), 5, seed=0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 30), min_size=1, max_size=5), st.integers(0, 2**32 - 1))
    def test_partition(self, counts, seed):
        ds = self.make(counts)
        n = min(counts)
        train, test = per_class_split(ds, n, seed)
        ids_train, ids_test = set(train.samples[:, 0]), set(test.samples[:, 0])
        assert not ids_train & ids_test
        assert ids_train | ids_test == set(ds.samples[:, 0])
        assert np.all(train.histogram == n)


class TestSynthetic:
    def test_noiseless_matches_prototype(self):
        ds = generate_synthetic((3, 4, 2), 3, 5, 0.0, seed=1)
        for k in range(3):
            block = ds.samples[ds.labels == k]
            assert np.all(block == block[0])
            # prototype is a unit-norm rank-1 tensor
            assert np.linalg.norm(block[0]) == pytest.approx(1.0, abs=1e-12)
            assert np.linalg.matrix_rank(block[0].reshape(3, -1)) == 1

    def test_nearest_prototype_is_perfect(self):
        ds = generate_synthetic((4, 4), 2, 10, 0.0, seed=2)
        protos = np.stack([ds.samples[ds.labels == k][0] for k in range(2)])
        dist = ((ds.samples[:, None] - protos[None]) ** 2).sum(axis=(2, 3))
        assert np.all(dist.argmin(axis=1) == ds.labels)

    def test_deterministic_and_balanced(self):
        a = generate_synthetic((2, 3, 4), 4, 7, 0.3, seed=5)
        b = generate_synthetic((2, 3, 4), 4, 7, 0.3, seed=5)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.histogram, [7, 7, 7, 7])

    def test_any_order(self):
        assert generate_synthetic((6,), 2, 3, 0.1, 0).dims == (6,)
        assert generate_synthetic((2, 2, 2, 2), 2, 3, 0.1, 0).dims == (2, 2, 2, 2)


class TestPatchSetIO:
    def test_round_trip(self, tmp_path):
        ds = generate_synthetic((2, 3, 4), 3, 4, 0.5, seed=0)
        save_patch_set(ds, tmp_path / "p.hsp", tmp_path / "l.csv")
        back = load_patch_set(tmp_path / "p.hsp", tmp_path / "l.csv")
        np.testing.assert_array_equal(back.samples, ds.samples)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.n_classes == 3

    def test_truncated(self, tmp_path):
        ds = generate_synthetic((2, 2), 2, 2, 0.5, seed=0)
        save_patch_set(ds, tmp_path / "p.hsp", tmp_path / "l.csv")
        raw = (tmp_path / "p.hsp").read_bytes()
        (tmp_path / "p.hsp").write_bytes(raw[:-8])
        with pytest.raises(TruncatedDataError):
            load_patch_set(tmp_path / "p.hsp", tmp_path / "l.csv")


def test_select_classes():
    labels = np.repeat([0, 1, 2], [5, 1, 4])
    ds = LabeledDataset(np.zeros((10, 1)), labels, 3)
    out = select_classes(ds, 3)
    assert out.n_classes == 2
    np.testing.assert_array_equal(out.histogram, [5, 4])


def test_dataset_invariants():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 3)), [0, 3], 3)
    ds = LabeledDataset(np.zeros((3, 2)), [0, 2, 2], 3)
    np.testing.assert_array_equal(ds.targets.sum(axis=1), 1)
    np.testing.assert_array_equal(ds.histogram, ds.targets.sum(axis=0))
