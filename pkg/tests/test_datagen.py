import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmr_orient.datagen import (MODALITY_PROFILES, N_CLASSES, Sample,
                                SplitSpec, generate_pair, make_phantom, split)
from cmr_orient.orient import apply_to_grid, invert


class TestSample:
    def test_one_hot(self):
        s = Sample(image=np.zeros((4, 4)), orient="101")
        v = s.one_hot
        assert v.shape == (8,)
        assert v.sum() == 1.0
        assert v[5] == 1.0

    def test_seg_shape_mismatch(self):
        with pytest.raises(ValueError):
            Sample(image=np.zeros((4, 4)), orient=0, seg=np.zeros((4, 5)))


class TestGeneratePair:
    def test_same_code_applied_to_image_and_label(self):
        rng = np.random.default_rng(0)
        img, seg = make_phantom(rng, 40)
        for _ in range(20):
            s = generate_pair(img, seg, rng)
            assert np.array_equal(s.image, apply_to_grid(s.orient, img))
            assert np.array_equal(s.seg, apply_to_grid(s.orient, seg))

    def test_invertible(self):
        rng = np.random.default_rng(1)
        img, _ = make_phantom(rng, 40)
        s = generate_pair(img, rng=rng)
        assert np.array_equal(apply_to_grid(invert(s.orient), s.image), img)

    def test_uniform_over_classes(self):
        rng = np.random.default_rng(2)
        img = np.arange(16.0).reshape(4, 4)
        counts = np.zeros(8)
        for _ in range(4000):
            counts[generate_pair(img, rng=rng).orient.bits] += 1
        # Multinomial with p=1/8: expect 500 each; 5 sigma is ~105.
        assert np.abs(counts - 500).max() < 110

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            generate_pair(np.zeros((0, 3)))

    def test_label_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            generate_pair(np.zeros((4, 4)), np.zeros((5, 4)))


class TestPhantom:
    def test_shapes_and_dtypes(self):
        img, seg = make_phantom(np.random.default_rng(3), 64)
        assert img.shape == (64, 64) and img.dtype == np.float32
        assert seg.shape == (64, 64) and seg.dtype == np.uint8

    def test_all_classes_present(self):
        for seed in range(10):
            _, seg = make_phantom(np.random.default_rng(seed), 64)
            assert set(np.unique(seg)) == set(range(N_CLASSES))

    def test_gray_range(self):
        img, _ = make_phantom(np.random.default_rng(4), 64)
        assert img.min() >= 0.0 and img.max() <= 255.0

    @pytest.mark.parametrize("modality", sorted(MODALITY_PROFILES))
    def test_modalities(self, modality):
        img, seg = make_phantom(np.random.default_rng(5), 64, modality)
        prof = MODALITY_PROFILES[modality]
        # Mean LV intensity should sit near its profile value.
        assert abs(img[seg == 2].mean() - prof[2]) < 30

    def test_unknown_modality(self):
        with pytest.raises(ValueError):
            make_phantom(np.random.default_rng(0), 64, "ct")

    def test_too_small(self):
        with pytest.raises(ValueError):
            make_phantom(np.random.default_rng(0), 16)

    def test_orientations_distinguishable(self):
        # The phantom must break every symmetry of the square, otherwise
        # orientation labels would be ambiguous.
        img, _ = make_phantom(np.random.default_rng(6), 64)
        views = [apply_to_grid(c, img) for c in range(8)]
        for i in range(8):
            for j in range(i + 1, 8):
                if views[i].shape == views[j].shape:
                    assert not np.allclose(views[i], views[j], atol=1.0)

    def test_deterministic_given_rng_state(self):
        a = make_phantom(np.random.default_rng(42), 48)
        b = make_phantom(np.random.default_rng(42), 48)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestSplit:
    def test_default_ratios_80_10_10(self):
        data = list(range(100))
        tr, va, te = split(data, SplitSpec(seed=0))
        assert (len(tr), len(va), len(te)) == (80, 10, 10)

    def test_disjoint_and_complete(self):
        data = list(range(97))
        tr, va, te = split(data, SplitSpec(seed=1))
        assert sorted(tr + va + te) == data
        assert not (set(tr) & set(va)) and not (set(va) & set(te))

    def test_deterministic(self):
        data = list(range(50))
        assert split(data, SplitSpec(seed=5)) == split(data, SplitSpec(seed=5))

    def test_seed_changes_assignment(self):
        data = list(range(50))
        assert split(data, SplitSpec(seed=0)) != split(data, SplitSpec(seed=1))

    def test_too_small(self):
        with pytest.raises(ValueError):
            split(list(range(5)), SplitSpec())

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            SplitSpec(ratios=(0.5, 0.5, 0.5))

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(10, 300), seed=st.integers(0, 100))
    def test_sizes_within_one_of_exact(self, n, seed):
        spec = SplitSpec(seed=seed)
        parts = split(list(range(n)), spec)
        assert sum(len(p) for p in parts) == n
        for part, r in zip(parts, spec.ratios):
            assert abs(len(part) - r * n) <= 1
