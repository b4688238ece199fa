"""Image IO, augmentation, the synthetic pool, and batch assembly."""

import warnings

import numpy as np
import pytest

from dsat.data import dihedral, load_image, load_manifest, make_batch, save_image, synth_pool
from dsat.degradation import DegradationSpec, degrade
from dsat.errors import DataError


def const_pool(values, size):
    return [np.full((size, size, 3), v, dtype=np.float32) for v in values]


class TestImageIO:
    def test_png_roundtrip_quantises(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(9, 7, 3)).astype(np.float32)
        path = tmp_path / "x.png"
        save_image(path, img)
        back = load_image(path)
        assert back.shape == (9, 7, 3)
        assert back.dtype == np.float32
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-6

    def test_8bit_values_exact(self, tmp_path):
        img = (np.arange(256, dtype=np.float32) / 255.0).reshape(16, 16, 1)
        img = np.repeat(img, 3, axis=2)
        path = tmp_path / "g.png"
        save_image(path, img)
        assert np.array_equal(load_image(path), img)

    def test_grayscale_loads_single_channel(self, tmp_path):
        from PIL import Image
        arr = (np.arange(64, dtype=np.uint8).reshape(8, 8) * 4)
        Image.fromarray(arr, mode="L").save(tmp_path / "g.png")
        img = load_image(tmp_path / "g.png")
        assert img.shape == (8, 8, 1)

    def test_manifest_relative_paths_and_comments(self, tmp_path):
        rng = np.random.default_rng(1)
        sub = tmp_path / "imgs"
        sub.mkdir()
        for name in ("a.png", "b.png"):
            save_image(sub / name, rng.uniform(size=(6, 6, 3)).astype(np.float32))
        man = tmp_path / "list.txt"
        man.write_text("# training images\nimgs/a.png\n\nimgs/b.png\n")
        pool = load_manifest(man)
        assert len(pool) == 2
        assert all(p.shape == (6, 6, 3) for p in pool)

    def test_manifest_missing_file(self, tmp_path):
        man = tmp_path / "list.txt"
        man.write_text("nope.png\n")
        with pytest.raises(DataError):
            load_manifest(man)


class TestDihedral:
    def test_eight_distinct_transforms(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(5, 5, 1)).astype(np.float32)
        outs = [dihedral(img, k) for k in range(8)]
        for i in range(8):
            for j in range(i + 1, 8):
                assert not np.array_equal(outs[i], outs[j])

    def test_identity_and_rotation_cycle(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(4, 6, 3)).astype(np.float32)
        assert np.array_equal(dihedral(img, 0), img)
        out = img
        for _ in range(4):
            out = dihedral(out, 1)
        assert np.array_equal(out, img)

    def test_flip_is_involution(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(size=(4, 4, 3)).astype(np.float32)
        assert np.array_equal(dihedral(dihedral(img, 4), 4), img)

    def test_rectangular_shapes_transpose(self):
        img = np.zeros((4, 6, 3), dtype=np.float32)
        assert dihedral(img, 1).shape == (6, 4, 3)


class TestSynthPool:
    def test_shapes_range_determinism(self):
        pool_a = synth_pool(4, 64, np.random.default_rng(5))
        pool_b = synth_pool(4, 64, np.random.default_rng(5))
        assert len(pool_a) == 4
        for a, b in zip(pool_a, pool_b):
            assert a.shape == (64, 64, 3)
            assert a.dtype == np.float32
            assert a.min() >= 0.0 and a.max() <= 1.0
            assert np.array_equal(a, b)

    def test_images_differ(self):
        pool = synth_pool(3, 32, np.random.default_rng(6))
        assert not np.array_equal(pool[0], pool[1])

    def test_images_have_structure(self):
        # Not flat: each image carries usable contrast for SR training.
        for img in synth_pool(4, 48, np.random.default_rng(7)):
            assert img.std() > 0.02


class TestMakeBatch:
    def test_shapes_and_dtypes(self):
        pool = synth_pool(4, 96, np.random.default_rng(8))
        batch = make_batch(pool, np.random.default_rng(9), scale=4, lr_patch=12,
                           batch_images=5)
        assert batch.lr.shape == (10, 12, 12, 3)
        assert batch.hr.shape == (10, 48, 48, 3)
        assert batch.lr.dtype == np.float32
        assert len(batch.specs) == 5
        assert batch.pair_count == 5
        assert batch.lr.min() >= 0.0 and batch.lr.max() <= 1.0

    def test_paper_batch_geometry(self):
        pool = synth_pool(2, 96, np.random.default_rng(10))
        batch = make_batch(pool, np.random.default_rng(11), scale=2, lr_patch=48,
                           batch_images=16)
        assert batch.lr.shape == (32, 48, 48, 3)
        assert batch.hr.shape == (32, 96, 96, 3)

    def test_rows_pair_by_source_image(self):
        # Constant-valued images survive degradation exactly, so the patch
        # value identifies the source: row i and row B+i must agree.
        pool = const_pool([0.1, 0.3, 0.5, 0.7, 0.9], 64)
        noisefree = lambda r: DegradationSpec(kind="isotropic", scale=2,
                                              sigma=float(r.uniform(0.2, 2.0)))
        batch = make_batch(pool, np.random.default_rng(12), scale=2, lr_patch=8,
                           batch_images=6, augment=False, sample=noisefree)
        b = batch.pair_count
        for i in range(b):
            assert np.array_equal(batch.lr[i], batch.lr[b + i])
        vals = [float(batch.lr[i, 0, 0, 0]) for i in range(b)]
        assert len(set(vals)) > 1  # several source images actually used

    def test_specs_differ_across_images(self):
        pool = synth_pool(2, 64, np.random.default_rng(13))
        batch = make_batch(pool, np.random.default_rng(14), scale=2, lr_patch=8,
                           batch_images=6)
        assert len({(s.lambda1, s.lambda2, s.theta) for s in batch.specs}) == 6

    def test_hr_patches_align_with_lr(self):
        # On constant images alignment is invisible; use ramps instead.
        # The HR patch must cover exactly the LR patch's footprint, so a
        # noise-free re-degradation of the HR patch region equals the LR
        # patch in the interior (borders differ by padding context).
        x = np.linspace(0.0, 1.0, 64, dtype=np.float32)
        pool = [np.tile(x, (64, 1))[:, :, None].repeat(3, axis=2)]
        spec = DegradationSpec(kind="isotropic", scale=2, sigma=0.2)
        batch = make_batch(pool, np.random.default_rng(15), scale=2, lr_patch=8,
                           batch_images=2, augment=False, sample=lambda r: spec)
        for i in range(batch.lr.shape[0]):
            re_lr = degrade(batch.hr[i], spec, rng_seed=0)
            inner = np.abs(re_lr[2:-2, 2:-2] - batch.lr[i, 2:-2, 2:-2]).max()
            assert inner < 1e-3

    def test_whole_image_patch_is_exact_composition(self):
        # Pool image exactly one patch in size: offsets are forced to zero,
        # augmentation off, no noise; the LR patch must equal a direct
        # degradation of the HR image bit for bit.
        rng = np.random.default_rng(16)
        hr = rng.uniform(size=(16, 16, 3)).astype(np.float32)
        spec = DegradationSpec(kind="isotropic", scale=2, sigma=1.1)
        batch = make_batch([hr], np.random.default_rng(17), scale=2, lr_patch=8,
                           batch_images=1, augment=False, sample=lambda r: spec)
        direct = degrade(hr, spec, rng_seed=0)
        assert np.array_equal(batch.lr[0], direct)
        assert np.array_equal(batch.lr[1], direct)
        assert np.array_equal(batch.hr[0], hr)

    def test_determinism(self):
        pool = synth_pool(3, 64, np.random.default_rng(18))
        a = make_batch(pool, np.random.default_rng(19), scale=2, lr_patch=8,
                       batch_images=4)
        b = make_batch(pool, np.random.default_rng(19), scale=2, lr_patch=8,
                       batch_images=4)
        assert np.array_equal(a.lr, b.lr)
        assert np.array_equal(a.hr, b.hr)
        assert a.specs == b.specs

    def test_undersized_images_skipped_with_warning(self):
        pool = [np.zeros((8, 8, 3), dtype=np.float32)] + const_pool([0.5], 64)
        noisefree = lambda r: DegradationSpec(kind="isotropic", scale=2, sigma=1.0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            batch = make_batch(pool, np.random.default_rng(20), scale=2,
                               lr_patch=16, batch_images=8, augment=False,
                               sample=noisefree)
        assert any("skip" in str(w.message) for w in caught)
        assert batch.lr.shape[0] == 16
        assert np.allclose(batch.lr, 0.5)

    def test_all_undersized_raises(self):
        pool = [np.zeros((8, 8, 3), dtype=np.float32)]
        with pytest.raises(DataError):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                make_batch(pool, np.random.default_rng(21), scale=2,
                           lr_patch=16, batch_images=2)

    def test_empty_pool_raises(self):
        with pytest.raises(DataError):
            make_batch([], np.random.default_rng(22))
