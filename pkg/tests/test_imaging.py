import json

import numpy as np
import pytest
from PIL import Image

from resincam.imaging import (BackgroundModel, BinaryMask, DecodeError,
                              ManifestError, RasterImage, load_image,
                              load_manifest, mask_from_image, remove_background,
                              save_image, to_grayscale)

from conftest import paint, solid, write_png


class TestLoadImage:
    def test_decodes_1x1_red(self, tmp_path):
        path = write_png(tmp_path / "r.png", solid(1, 1, (255, 0, 0)))
        img = load_image(path)
        assert (img.width, img.height) == (1, 1)
        assert img.pixel(0, 0) == (255, 0, 0)

    @pytest.mark.parametrize("size", [(288, 302), (402, 424)])
    def test_dataset_sized_images(self, tmp_path, size):
        # Same resolutions as two of the cropped dataset images.
        w, h = size
        path = write_png(tmp_path / "img.png", solid(w, h, (90, 60, 40)))
        img = load_image(path)
        assert (img.width, img.height) == (w, h)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_not_a_png(self, tmp_path):
        path = tmp_path / "img.jpg"
        Image.fromarray(solid(4, 4, (1, 2, 3)).array).save(str(path), format="JPEG")
        with pytest.raises(DecodeError):
            load_image(path)

    def test_garbage_bytes(self, tmp_path):
        path = tmp_path / "junk.png"
        path.write_bytes(b"not a png at all")
        with pytest.raises(DecodeError):
            load_image(path)

    def test_palette_png_rejected(self, tmp_path):
        path = tmp_path / "pal.png"
        Image.fromarray(solid(4, 4, (9, 9, 9)).array).convert("P").save(str(path), format="PNG")
        with pytest.raises(DecodeError):
            load_image(path)

    def test_alpha_dropped(self, tmp_path):
        rgba = np.zeros((2, 2, 4), dtype=np.uint8)
        rgba[:, :] = (10, 20, 30, 77)
        path = tmp_path / "a.png"
        Image.fromarray(rgba, mode="RGBA").save(str(path), format="PNG")
        img = load_image(path)
        assert img.pixel(1, 1) == (10, 20, 30)

    def test_save_load_round_trip(self, tmp_path, rng):
        arr = rng.integers(0, 256, size=(17, 23, 3), dtype=np.uint8)
        src = RasterImage(arr)
        path = tmp_path / "rt.png"
        save_image(src, path)
        assert np.array_equal(load_image(path).array, arr)


class TestRasterImage:
    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            RasterImage(np.zeros((4, 4), dtype=np.uint8))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            RasterImage(np.zeros((0, 3, 3), dtype=np.uint8))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            RasterImage(np.full((2, 2, 3), 300, dtype=np.int32))


class TestRemoveBackground:
    def test_uniform_chroma_key_all_background(self):
        img = solid(8, 8, (0, 200, 0))
        model = BackgroundModel.chroma_key((0, 200, 0), tolerance=10)
        mask = remove_background(img, model)
        assert mask.count() == 0

    def test_block_oracle(self):
        # Oracle: per-pixel euclidean distance enumeration.
        green, brown = (0, 200, 0), (120, 75, 40)
        img = paint(solid(8, 8, green), 3, 3, 4, 4, brown)
        model = BackgroundModel.chroma_key(green, tolerance=40)
        mask = remove_background(img, model)
        expected = np.zeros((8, 8), dtype=bool)
        for y in range(8):
            for x in range(8):
                r, g, b = img.pixel(x, y)
                d = ((r - green[0]) ** 2 + (g - green[1]) ** 2 + (b - green[2]) ** 2) ** 0.5
                expected[y, x] = d > 40
        assert np.array_equal(mask.bits, expected)
        assert mask.count() == 4  # exactly the 2x2 block

    def test_zero_tolerance_keeps_everything_not_exact(self):
        img = solid(5, 5, (10, 10, 10))
        model = BackgroundModel.chroma_key((11, 10, 10), tolerance=0)
        assert remove_background(img, model).count() == 25

    def test_corner_sample_mean(self):
        img = solid(4, 4, (100, 100, 100))
        arr = img.array.copy()
        arr[0, 0] = (96, 100, 100)
        arr[0, -1] = (104, 100, 100)
        img = RasterImage(arr)
        # Corner mean is (100, 100, 100); interior pixels sit at distance 0.
        mask = remove_background(img, BackgroundModel.corner_sample(tolerance=3))
        assert not mask.bits[1:3, 1:3].any()
        assert mask.bits[0, 0] and mask.bits[0, -1]  # distance 4 > 3

    def test_corner_sample_needs_2x2(self):
        with pytest.raises(ValueError):
            remove_background(solid(1, 1, (0, 0, 0)), BackgroundModel.corner_sample())

    def test_idempotent(self, rng):
        arr = rng.integers(0, 256, size=(9, 9, 3), dtype=np.uint8)
        img = RasterImage(arr)
        model = BackgroundModel.chroma_key((0, 255, 0), tolerance=60)
        first = remove_background(img, model)
        second = remove_background(img, model)
        assert np.array_equal(first.bits, second.bits)

    def test_monotone_in_tolerance(self, rng):
        arr = rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        img = RasterImage(arr)
        prev = None
        for tol in (0, 25, 50, 100, 200, 441.68):
            fg = remove_background(img, BackgroundModel.chroma_key((30, 180, 60), tolerance=tol))
            if prev is not None:
                # Raising tolerance can only move pixels out of the foreground.
                assert not (fg.bits & ~prev).any()
            prev = fg.bits

    def test_tolerance_validation(self):
        with pytest.raises(ValueError):
            BackgroundModel.chroma_key((0, 0, 0), tolerance=-1)
        with pytest.raises(ValueError):
            BackgroundModel.chroma_key((0, 0, 0), tolerance=500)


class TestToGrayscale:
    def test_white_black(self):
        assert to_grayscale(solid(1, 1, (255, 255, 255)))[0, 0] == 255
        assert to_grayscale(solid(1, 1, (0, 0, 0)))[0, 0] == 0

    def test_mixed_pixel(self):
        # round(0.299*100 + 0.587*150 + 0.114*50) = round(123.65) = 124
        assert to_grayscale(solid(1, 1, (100, 150, 50)))[0, 0] == 124

    def test_gray_identity_exhaustive(self):
        column = np.arange(256, dtype=np.uint8).reshape(-1, 1, 1)
        img = RasterImage(np.repeat(column, 3, axis=2))
        luma = to_grayscale(img)
        assert np.array_equal(luma[:, 0], np.arange(256))

    def test_shape(self, rng):
        arr = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
        assert to_grayscale(RasterImage(arr)).shape == (7, 5)


class TestMaskFromImage:
    def test_threshold_at_128(self):
        img = solid(2, 1, (127, 127, 127))
        img = paint(img, 1, 0, 1, 0, (128, 128, 128))
        mask = mask_from_image(img)
        assert mask.bits.tolist() == [[False, True]]


def _write_manifest(tmp_path, entries):
    doc = {"entries": entries}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


class TestLoadManifest:
    def test_empty(self, tmp_path):
        manifest = load_manifest(_write_manifest(tmp_path, []))
        assert manifest.entries == ()

    def test_twelve_entries(self, tmp_path):
        ids = "abcdefghijkl"
        entries = []
        for i, eid in enumerate(ids):
            w, h = 10 + i, 12 + i
            write_png(tmp_path / f"{eid}.png", solid(w, h, (50, 40, 30)))
            write_png(tmp_path / f"{eid}_mask.png", solid(w, h, (255, 255, 255)))
            entries.append({"id": eid, "image": f"{eid}.png", "mask": f"{eid}_mask.png"})
        manifest = load_manifest(_write_manifest(tmp_path, entries))
        assert manifest.ids() == list(ids)
        assert manifest.entry("c").image_path.endswith("c.png")

    def test_dimension_mismatch_names_id(self, tmp_path):
        write_png(tmp_path / "x.png", solid(20, 20, (0, 0, 0)))
        write_png(tmp_path / "x_mask.png", solid(10, 10, (255, 255, 255)))
        path = _write_manifest(tmp_path, [{"id": "x", "image": "x.png", "mask": "x_mask.png"}])
        with pytest.raises(ManifestError) as err:
            load_manifest(path)
        assert "'x'" in str(err.value.problems[0])
        assert "mismatch" in err.value.problems[0]

    def test_missing_file_names_id(self, tmp_path):
        write_png(tmp_path / "y.png", solid(4, 4, (0, 0, 0)))
        path = _write_manifest(tmp_path, [{"id": "y", "image": "y.png", "mask": "gone.png"}])
        with pytest.raises(ManifestError) as err:
            load_manifest(path)
        assert "'y'" in err.value.problems[0]

    def test_duplicate_ids(self, tmp_path):
        write_png(tmp_path / "z.png", solid(4, 4, (0, 0, 0)))
        write_png(tmp_path / "z_mask.png", solid(4, 4, (255, 255, 255)))
        entry = {"id": "z", "image": "z.png", "mask": "z_mask.png"}
        with pytest.raises(ManifestError) as err:
            load_manifest(_write_manifest(tmp_path, [entry, entry]))
        assert "duplicate" in err.value.problems[0]

    def test_bad_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ManifestError):
            load_manifest(path)


class TestBinaryMask:
    def test_full(self):
        m = BinaryMask.full(3, 2, True)
        assert (m.width, m.height, m.count()) == (3, 2, 6)

    def test_same_shape(self):
        assert BinaryMask.full(3, 2).same_shape(solid(3, 2, (0, 0, 0)))
        assert not BinaryMask.full(2, 3).same_shape(solid(3, 2, (0, 0, 0)))
