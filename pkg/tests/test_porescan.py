import numpy as np
import pytest

from fusegp import porescan as ps
from fusegp.errors import DataError


def disk_mask(shape, centers, radii):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    mask = np.zeros(shape, dtype=bool)
    for (cy, cx), r in zip(centers, radii):
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
    return mask


def otsu_brute_force(img):
    """Exhaustive scan of all 256 thresholds (lowest argmax wins)."""
    hist = np.bincount(np.asarray(img).ravel(), minlength=256).astype(float)
    n = hist.sum()
    levels = np.arange(256, dtype=float)
    best_t, best_v = 0, -1.0
    for t in range(256):
        c0 = hist[:t + 1].sum()
        c1 = n - c0
        if c0 == 0 or c1 == 0:
            continue
        mu0 = (levels[:t + 1] * hist[:t + 1]).sum() / c0
        mu1 = (levels[t + 1:] * hist[t + 1:]).sum() / c1
        v = c0 * c1 * (mu0 - mu1) ** 2
        if v > best_v:
            best_v, best_t = v, t
    return best_t


class TestCrop:
    def test_zero_margin_identity(self):
        img = np.arange(30, dtype=np.uint8).reshape(5, 6)
        assert np.array_equal(ps.crop_borders(img, 0), img)

    def test_central_window(self):
        img = np.arange(100, dtype=np.uint8).reshape(10, 10)
        out = ps.crop_borders(img, 2)
        assert out.shape == (6, 6)
        assert np.array_equal(out, img[2:8, 2:8])

    def test_margin_too_large(self):
        with pytest.raises(ValueError, match="too large"):
            ps.crop_borders(np.zeros((4, 4), dtype=np.uint8), 2)


class TestOtsu:
    def test_bimodal_separates_modes(self):
        img = np.concatenate([np.full(50, 50), np.full(50, 200)]).astype(np.uint8)
        img = img.reshape(10, 10)
        res = ps.otsu_threshold(img)
        assert not res.degenerate
        assert 50 <= res.threshold < 200
        assert res.threshold == otsu_brute_force(img)

    def test_constant_image_degenerate(self):
        img = np.full((8, 8), 77, dtype=np.uint8)
        res = ps.otsu_threshold(img)
        assert res.degenerate
        assert res.threshold == 77
        assert not ps.binarize(img, res).any()

    def test_two_delta_plateau_breaks_low(self):
        img = np.zeros((4, 4), dtype=np.uint8)
        img[2:] = 255
        res = ps.otsu_threshold(img)
        assert res.threshold == 0
        assert res.threshold == otsu_brute_force(img)

    def test_matches_exhaustive_scan_on_random_images(self, rng):
        for _ in range(25):
            n_levels = int(rng.integers(2, 20))
            levels = rng.choice(256, size=n_levels, replace=False)
            img = rng.choice(levels, size=(12, 12)).astype(np.uint8)
            assert ps.otsu_threshold(img).threshold == otsu_brute_force(img)

    def test_binarize_polarity(self):
        img = np.array([[10, 200]], dtype=np.uint8)
        res = ps.otsu_threshold(img)
        assert ps.binarize(img, res).tolist() == [[True, False]]
        assert ps.binarize(img, res, invert=True).tolist() == [[False, True]]


class TestDilate:
    def test_unit_disk_is_plus_shape(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        out = ps.dilate(mask, 1)
        expected = np.zeros((5, 5), dtype=bool)
        expected[2, 1:4] = True
        expected[1:4, 2] = True
        assert np.array_equal(out, expected)

    def test_zero_radius_identity(self):
        mask = np.random.default_rng(0).uniform(0, 1, (6, 6)) > 0.5
        assert np.array_equal(ps.dilate(mask, 0), mask)

    def test_full_foreground_absorbing(self):
        mask = np.ones((7, 7), dtype=bool)
        assert np.array_equal(ps.dilate(mask, 2), mask)

    def test_never_shrinks(self, rng):
        for _ in range(10):
            mask = rng.uniform(0, 1, (15, 15)) > 0.7
            out = ps.dilate(mask, 1)
            assert np.all(out[mask])
            assert out.sum() >= mask.sum()


class TestLabelComponents:
    def test_checkerboard_is_single_component(self):
        yy, xx = np.mgrid[0:6, 0:6]
        mask = (yy + xx) % 2 == 0
        labels, count = ps.label_components(mask)
        assert count == 1
        assert set(labels[mask].tolist()) == {1}

    def test_two_disjoint_blocks(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[1:3, 1:3] = True
        mask[6:9, 6:9] = True
        labels, count = ps.label_components(mask)
        assert count == 2
        assert labels[1, 1] == 1  # raster-scan first touch gets label 1
        assert labels[6, 6] == 2

    def test_empty_image(self):
        labels, count = ps.label_components(np.zeros((4, 4), dtype=bool))
        assert count == 0
        assert not labels.any()

    def test_labels_contiguous(self, rng):
        mask = rng.uniform(0, 1, (20, 20)) > 0.75
        labels, count = ps.label_components(mask)
        present = sorted(set(labels.ravel().tolist()) - {0})
        assert present == list(range(1, count + 1))


class TestWatershed:
    def test_disjoint_disks_stay_intact(self):
        mask = disk_mask((40, 80), [(20, 20), (20, 60)], [10, 10])
        labels, count = ps.watershed_split(mask)
        assert count == 2
        one = disk_mask((40, 80), [(20, 20)], [10])
        two = disk_mask((40, 80), [(20, 60)], [10])
        assert np.array_equal(labels == 1, one)
        assert np.array_equal(labels == 2, two)

    def test_overlapping_disks_split_in_two(self):
        mask = disk_mask((80, 110), [(40, 40), (40, 70)], [20, 20])
        labels, count = ps.watershed_split(mask)
        assert count == 2
        assert np.array_equal(labels > 0, mask)

    def test_single_disk_single_label(self):
        mask = disk_mask((40, 40), [(20, 20)], [12])
        labels, count = ps.watershed_split(mask)
        assert count == 1

    def test_empty_foreground(self):
        labels, count = ps.watershed_split(np.zeros((5, 5), dtype=bool))
        assert count == 0 and not labels.any()

    def test_refines_component_labeling(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            mask = ps.dilate(r.uniform(0, 1, (30, 30)) > 0.9, 2)
            _, n_components = ps.label_components(mask)
            _, n_watershed = ps.watershed_split(mask)
            assert n_watershed >= n_components

    def test_regions_are_connected(self):
        mask = disk_mask((80, 110), [(40, 40), (40, 70)], [20, 20])
        labels, count = ps.watershed_split(mask)
        for lab in range(1, count + 1):
            _, pieces = ps.label_components(labels == lab)
            assert pieces == 1


class TestPoreStats:
    def test_square_block_geometry(self):
        labels = np.zeros((100, 100), dtype=np.int32)
        labels[40:50, 60:70] = 1
        stats = ps.pore_stats(labels)
        assert stats.count == 1
        pore = stats.pores[0]
        assert pore.area == 100
        assert pore.perimeter == 40
        assert pore.centroid == (64.5, 44.5)
        assert stats.phi == pytest.approx(1.0, abs=1e-15)

    def test_empty_image(self):
        stats = ps.pore_stats(np.zeros((10, 10), dtype=np.int32))
        assert stats.count == 0
        assert stats.phi == 0.0

    def test_full_foreground(self):
        stats = ps.pore_stats(np.ones((10, 10), dtype=np.int32))
        assert stats.phi == pytest.approx(100.0)
        assert stats.pores[0].perimeter == 40

    def test_areas_sum_to_foreground(self, rng):
        mask = rng.uniform(0, 1, (30, 30)) > 0.7
        labels, _ = ps.label_components(mask)
        stats = ps.pore_stats(labels)
        assert sum(p.area for p in stats.pores) == int(mask.sum())

    def test_translation_invariance(self):
        base = np.zeros((50, 50), dtype=bool)
        base[5:12, 8:17] = True
        base[20:24, 30:33] = True
        labels_a, _ = ps.label_components(base)
        stats_a = ps.pore_stats(labels_a)
        shifted = np.roll(np.roll(base, 7, axis=0), 11, axis=1)
        labels_b, _ = ps.label_components(shifted)
        stats_b = ps.pore_stats(labels_b)
        for pa, pb in zip(stats_a.pores, stats_b.pores):
            assert pb.area == pa.area
            assert pb.perimeter == pa.perimeter
            assert pb.centroid[0] == pytest.approx(pa.centroid[0] + 11)
            assert pb.centroid[1] == pytest.approx(pa.centroid[1] + 7)

    def test_equivalent_radius_definition(self):
        labels = np.zeros((20, 20), dtype=np.int32)
        labels[0:4, 0:4] = 1
        stats = ps.pore_stats(labels)
        assert stats.pores[0].radius == pytest.approx(np.sqrt(16 / np.pi), abs=1e-12)


class TestPipeline:
    def test_dilation_never_lowers_porosity(self, rng):
        mask = rng.uniform(0, 1, (40, 40)) > 0.85
        before = ps.pore_stats(ps.label_components(mask)[0]).phi
        after = ps.pore_stats(ps.label_components(ps.dilate(mask, 1))[0]).phi
        assert after >= before

    def test_analyze_image_end_to_end(self):
        img = np.full((60, 60), 220, dtype=np.uint8)
        img[20:30, 20:30] = 15  # one dark pore
        stats, labels = ps.analyze_image(img, margin=5, dilate_radius=0)
        assert stats.count == 1
        assert stats.width == stats.height == 50
        assert stats.pores[0].area == 100
        assert stats.phi == pytest.approx(100.0 * 100 / 2500)

    def test_analyze_inverted_polarity(self):
        img = np.full((30, 30), 10, dtype=np.uint8)
        img[5:10, 5:10] = 240  # bright pore on dark background
        stats, _ = ps.analyze_image(img, dilate_radius=0, invert=True)
        assert stats.count == 1
        assert stats.pores[0].area == 25


class TestRasterIO:
    def test_pgm_roundtrip(self, tmp_path, rng):
        img = rng.integers(0, 256, (9, 13)).astype(np.uint8)
        path = tmp_path / "img.pgm"
        ps.save_gray(path, img)
        assert np.array_equal(ps.load_gray(path), img)

    def test_png_roundtrip(self, tmp_path, rng):
        img = rng.integers(0, 256, (7, 5)).astype(np.uint8)
        path = tmp_path / "img.png"
        ps.save_gray(path, img)
        assert np.array_equal(ps.load_gray(path), img)

    def test_non_grayscale_rejected(self, tmp_path):
        from PIL import Image
        path = tmp_path / "rgb.png"
        Image.new("RGB", (4, 4), (10, 20, 30)).save(path)
        with pytest.raises(DataError, match="grayscale"):
            ps.load_gray(path)

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "bad.png"
        path.write_bytes(b"not an image at all")
        with pytest.raises(DataError, match="not a readable raster"):
            ps.load_gray(path)

    def test_label_dump_scales_to_gray(self, tmp_path):
        labels = np.zeros((4, 4), dtype=np.int32)
        labels[0, 0] = 1
        labels[3, 3] = 2
        path = tmp_path / "labels.pgm"
        ps.save_label_image(path, labels)
        img = ps.load_gray(path)
        assert img[3, 3] == 255 and img[0, 0] == 128 and img[1, 1] == 0
