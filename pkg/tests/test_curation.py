import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aerothreat.core_types import (
    DataError,
    DatasetManifest,
    ThreatLevel,
    ValidationError,
    make_label_space,
    manifest_counts,
)
from aerothreat.curation import (
    AugmentationParams,
    SplitConfig,
    apply_affine,
    augment_image,
    balance_by_augmentation,
    content_hash,
    dedupe,
    ingest_source,
    load_image,
    preprocess_image,
    resize_bilinear,
    stratified_split,
)
from conftest import make_manifest, make_record, random_image, write_png


@pytest.fixture
def bird_space():
    return make_label_space("TWO", ["Bird", "Drone"])


def _ingest_dir(tmp_path, space, n=3, category="Bird", seed=0):
    src = tmp_path / "src"
    src.mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        write_png(src / f"img_{i}.png", random_image(rng))
    manifest = DatasetManifest(name="t", label_space=space)
    return src, ingest_source(src, "birds_src", category, manifest)


class TestIngest:
    def test_basic_ingest(self, tmp_path, bird_space):
        _, m = _ingest_dir(tmp_path, bird_space, n=3)
        assert len(m.records) == 3
        assert all(r.category == "Bird" for r in m.records)
        assert all(r.provenance == "original" for r in m.records)
        assert all(r.content_hash for r in m.records)

    def test_attributes_from_filename(self, tmp_path, bird_space):
        src = tmp_path / "src"
        src.mkdir()
        write_png(src / "hobby_drone_01.png", random_image(np.random.default_rng(0)))
        m = ingest_source(src, "s", "Drone", DatasetManifest(name="t", label_space=bird_space))
        assert m.records[0].attributes == ("hobby", "drone", "01")

    def test_double_ingest_then_dedupe_idempotent(self, tmp_path, bird_space):
        src, m = _ingest_dir(tmp_path, bird_space, n=3)
        m2 = ingest_source(src, "second_pass", "Bird", m)
        assert len(m2.records) == 6
        deduped, removed = dedupe(m2)
        assert len(deduped.records) == 3
        assert removed == 3

    def test_missing_directory(self, tmp_path, bird_space):
        with pytest.raises(DataError):
            ingest_source(
                tmp_path / "nope", "s", "Bird", DatasetManifest(name="t", label_space=bird_space)
            )

    def test_zero_readable_images(self, tmp_path, bird_space):
        src = tmp_path / "empty"
        src.mkdir()
        (src / "junk.png").write_bytes(b"not a png")
        with pytest.raises(ValidationError):
            ingest_source(src, "s", "Bird", DatasetManifest(name="t", label_space=bird_space))

    def test_unreadable_files_skipped_not_fatal(self, tmp_path, bird_space):
        src = tmp_path / "src"
        src.mkdir()
        write_png(src / "good.png", random_image(np.random.default_rng(0)))
        (src / "bad.png").write_bytes(b"garbage")
        m = ingest_source(src, "s", "Bird", DatasetManifest(name="t", label_space=bird_space))
        assert len(m.records) == 1


class TestDedupe:
    def test_byte_identical_collapse(self, tmp_path, bird_space):
        img = random_image(np.random.default_rng(1))
        a = write_png(tmp_path / "a.png", img)
        b = write_png(tmp_path / "b.png", img)
        records = [
            make_record("a", "Bird", chash=content_hash(load_image(a))),
            make_record("b", "Bird", chash=content_hash(load_image(b))),
        ]
        m = make_manifest(bird_space, records)
        out, removed = dedupe(m)
        assert removed == 1
        assert [r.id for r in out.records] == ["a"]  # lexicographically smallest id

    def test_no_duplicates_identity(self, bird_space):
        m = make_manifest(
            bird_space, [make_record("a", "Bird"), make_record("b", "Bird")]
        )
        out, removed = dedupe(m)
        assert removed == 0
        assert out.records == m.records

    def test_k_copies_among_n_vs_pixel_oracle(self, tmp_path, bird_space):
        # oracle: brute-force pairwise pixel comparison of the decoded files
        rng = np.random.default_rng(7)
        base = random_image(rng)
        n, k = 6, 4
        paths = []
        for i in range(k):
            paths.append(write_png(tmp_path / f"dup_{i}.png", base))
        for i in range(n - k):
            paths.append(write_png(tmp_path / f"uni_{i}.png", random_image(rng)))
        arrays = [load_image(p) for p in paths]
        unique = []
        for arr in arrays:
            if not any(
                arr.shape == u.shape and np.array_equal(arr, u) for u in unique
            ):
                unique.append(arr)
        records = [
            make_record(f"r{i}", "Bird", chash=content_hash(arr))
            for i, arr in enumerate(arrays)
        ]
        out, _ = dedupe(make_manifest(bird_space, records))
        assert len(out.records) == len(unique) == n - k + 1


class TestPreprocess:
    def test_all_white_32x32(self):
        img = np.full((32, 32, 3), 255, dtype=np.uint8)
        out = preprocess_image(img)
        assert out.shape == (32, 32, 3)
        assert np.all(out == 1.0)

    def test_constant_field_resizes_to_constant(self):
        img = np.full((64, 64, 3), 100, dtype=np.uint8)
        out = preprocess_image(img)
        np.testing.assert_allclose(out, 100 / 255.0)

    def test_grayscale_replicated(self):
        img = np.full((10, 10), 128, dtype=np.uint8)
        out = preprocess_image(img)
        assert out.shape == (32, 32, 3)
        np.testing.assert_allclose(out, 128 / 255.0)

    def test_checkerboard_bilinear_matches_hand_oracle(self):
        # independent corner-aligned bilinear interpolation, written longhand
        board = np.array([[0, 255], [255, 0]], dtype=np.uint8)
        img = np.repeat(board[:, :, None], 3, axis=2)
        out = preprocess_image(img)
        expected = np.zeros((32, 32))
        src = np.array([[0.0, 255.0], [255.0, 0.0]])
        for r in range(32):
            for c in range(32):
                y = r * (2 - 1) / (32 - 1)
                x = c * (2 - 1) / (32 - 1)
                y0, x0 = int(np.floor(y)), int(np.floor(x))
                y1, x1 = min(y0 + 1, 1), min(x0 + 1, 1)
                wy, wx = y - y0, x - x0
                expected[r, c] = (
                    src[y0, x0] * (1 - wy) * (1 - wx)
                    + src[y0, x1] * (1 - wy) * wx
                    + src[y1, x0] * wy * (1 - wx)
                    + src[y1, x1] * wy * wx
                ) / 255.0
        np.testing.assert_allclose(out[:, :, 0], expected, atol=1e-12)

    def test_bad_channel_count(self):
        with pytest.raises(ValidationError):
            preprocess_image(np.zeros((8, 8, 2)))


class TestStratifiedSplit:
    def _manifest(self, space, sizes):
        records = [
            make_record(f"{cat}-{i}", cat)
            for cat, n in zip(space.members, sizes)
            for i in range(n)
        ]
        return make_manifest(space, records)

    def test_70_30(self, bird_space):
        m = self._manifest(bird_space, [100, 100])
        out = stratified_split(m, SplitConfig(train_fraction=0.7, seed=0))
        for cat in bird_space.members:
            train = [
                r
                for r in out.records
                if r.category == cat and out.split_assignments[r.id] == "train"
            ]
            assert len(train) == 70

    def test_round_half_up_236_at_08(self):
        space = make_label_space("AVD", ["Airplane", "Drone", "Helicopter", "UAV"])
        m = self._manifest(space, [236, 2, 2, 2])
        out = stratified_split(m, SplitConfig(train_fraction=0.8, seed=1))
        airplane_train = sum(
            1
            for r in out.records
            if r.category == "Airplane" and out.split_assignments[r.id] == "train"
        )
        assert airplane_train == 189  # round(0.8 * 236)
        assert sum(
            1
            for r in out.records
            if r.category == "Airplane" and out.split_assignments[r.id] == "test"
        ) == 47

    def test_determinism(self, bird_space):
        m = self._manifest(bird_space, [30, 20])
        a = stratified_split(m, SplitConfig(train_fraction=0.8, seed=42))
        b = stratified_split(m, SplitConfig(train_fraction=0.8, seed=42))
        assert dict(a.split_assignments) == dict(b.split_assignments)
        assert [r.id for r in a.records] == [r.id for r in b.records]

    def test_small_category_rejected(self, bird_space):
        m = self._manifest(bird_space, [5, 1])
        with pytest.raises(ValidationError):
            stratified_split(m, SplitConfig(train_fraction=0.8, seed=0))

    @given(
        sizes=st.lists(st.integers(min_value=2, max_value=60), min_size=2, max_size=2),
        fraction=st.floats(min_value=0.1, max_value=0.9),
        seed=st.integers(min_value=0, max_value=2**16),
    )
    @settings(max_examples=50, deadline=None)
    def test_split_fraction_within_one_record(self, sizes, fraction, seed):
        space = make_label_space("TWO", ["Bird", "Drone"])
        m = self._manifest(space, sizes)
        out = stratified_split(
            m, SplitConfig(train_fraction=fraction, seed=seed)
        )
        for cat, total in zip(space.members, sizes):
            train = sum(
                1
                for r in out.records
                if r.category == cat and out.split_assignments[r.id] == "train"
            )
            assert abs(train / total - fraction) <= 1 / total + 1e-12


class TestAugmentation:
    def test_zero_ranges_identity(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (32, 32, 3))
        params = AugmentationParams(
            rotation_max=0, shift_max=0, shear_max=0, zoom_range=(1, 1), hflip_enabled=False
        )
        out, _ = augment_image(img, params, draw_seed=9)
        np.testing.assert_array_equal(out, img)

    def test_double_hflip_bit_exact(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (32, 32, 3))
        once = apply_affine(img, hflip=True)
        twice = apply_affine(once, hflip=True)
        assert np.array_equal(twice, img)

    def test_rotation_90_matches_index_permutation(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, (32, 32, 3))
        out = apply_affine(img, rotation_deg=90.0)
        expected = np.empty_like(img)
        for y in range(32):
            for x in range(32):
                expected[y, x] = img[31 - x, y]
        np.testing.assert_allclose(out, expected, atol=1e-9)

    def test_shape_and_range_preserved_over_random_draws(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 1, (32, 32, 3))
        params = AugmentationParams(seed=0)
        for draw_seed in range(50):
            out, desc = augment_image(img, params, draw_seed)
            assert out.shape == (32, 32, 3)
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert desc

    def test_invalid_params(self):
        with pytest.raises(ValidationError):
            AugmentationParams(rotation_max=-1)
        with pytest.raises(ValidationError):
            AugmentationParams(shift_max=1.0)
        with pytest.raises(ValidationError):
            AugmentationParams(zoom_range=(1.2, 1.4))


class TestBalance:
    def _file_backed_manifest(self, tmp_path, space, sizes):
        rng = np.random.default_rng(5)
        records = []
        for cat, n in zip(space.members, sizes):
            for i in range(n):
                path = write_png(tmp_path / f"{cat}_{i}.png", random_image(rng))
                rec = make_record(f"{cat}-{i}", cat, threat=ThreatLevel.LOW)
                records.append(
                    rec.__class__(**{**rec.__dict__, "path": str(path),
                                     "content_hash": content_hash(load_image(path))})
                )
        return make_manifest(space, records)

    def test_minority_gains_with_valid_lineage(self, tmp_path, bird_space):
        m = self._file_backed_manifest(tmp_path, bird_space, [5, 2])
        params = AugmentationParams(seed=3)
        out = balance_by_augmentation(m, params, tmp_path / "aug")
        counts = manifest_counts(out)
        assert counts == {"Bird": 5, "Drone": 5}
        added = [r for r in out.records if r.provenance == "augmented"]
        assert len(added) == 3
        originals = {r.id for r in m.records if r.category == "Drone"}
        for r in added:
            assert r.category == "Drone"
            assert r.parent_id in originals
            assert r.augmentation_desc
            assert r.threat == out.record_by_id(r.parent_id).threat
        # parents cycle round-robin over the two originals
        parents = [r.parent_id for r in added]
        assert len(set(parents[:2])) == 2

    def test_already_balanced_identity(self, tmp_path, bird_space):
        m = self._file_backed_manifest(tmp_path, bird_space, [3, 3])
        out = balance_by_augmentation(m, AugmentationParams(seed=0), tmp_path / "aug")
        assert out.records == m.records

    def test_max_category_untouched_and_totals(self, tmp_path):
        space = make_label_space("THREE", ["A", "B", "C"])
        m = self._file_backed_manifest(tmp_path, space, [4, 2, 1])
        out = balance_by_augmentation(m, AugmentationParams(seed=1), tmp_path / "aug")
        counts = manifest_counts(out)
        assert set(counts.values()) == {4}
        assert len(out.records) == 3 * 4
        a_added = [r for r in out.records if r.category == "A" and r.provenance == "augmented"]
        assert not a_added

    def test_empty_category_rejected(self, tmp_path, bird_space):
        m = self._file_backed_manifest(tmp_path, bird_space, [3, 0])
        with pytest.raises(ValidationError):
            balance_by_augmentation(m, AugmentationParams(seed=0), tmp_path / "aug")

    def test_deterministic_under_seed(self, tmp_path, bird_space):
        m = self._file_backed_manifest(tmp_path, bird_space, [4, 2])
        out1 = balance_by_augmentation(m, AugmentationParams(seed=11), tmp_path / "a1")
        out2 = balance_by_augmentation(m, AugmentationParams(seed=11), tmp_path / "a2")
        h1 = [r.content_hash for r in out1.records]
        h2 = [r.content_hash for r in out2.records]
        assert h1 == h2
