"""Image loading, color conversion, background removal, and dataset manifests.

Images are RGB8 throughout; masks are boolean grids where True marks the
retained (foreground) region. All functions are pure: they never mutate
their inputs and hold no global state.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

# Largest possible RGB euclidean distance, sqrt(3 * 255^2), rounded up.
MAX_RGB_DISTANCE = 441.68

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ImagingError(Exception):
    """Base error for image and manifest handling."""


class DecodeError(ImagingError):
    """File exists but is not a decodable 8-bit RGB/RGBA PNG."""


class ManifestError(ImagingError):
    """Manifest file is malformed or one of its entries fails validation.

    ``problems`` lists one message per failing entry, each naming the
    entry id involved.
    """

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = problems or []


@dataclass(frozen=True)
class RasterImage:
    """An RGB8 image stored as a (height, width, 3) uint8 array."""

    array: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.array)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if a.dtype != np.uint8:
            if a.min() < 0 or a.max() > 255:
                raise ValueError("channel values must lie in [0, 255]")
            a = a.astype(np.uint8)
        object.__setattr__(self, "array", a)

    @property
    def width(self) -> int:
        return self.array.shape[1]

    @property
    def height(self) -> int:
        return self.array.shape[0]

    def pixel(self, x: int, y: int) -> tuple[int, int, int]:
        r, g, b = self.array[y, x]
        return int(r), int(g), int(b)


@dataclass(frozen=True)
class BinaryMask:
    """Boolean pixel grid; True marks foreground / retained pixels."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError(f"expected (H, W) array, got shape {b.shape}")
        if b.dtype != np.bool_:
            b = b.astype(bool)
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        """Number of True (retained) pixels."""
        return int(self.bits.sum())

    def same_shape(self, other: "BinaryMask | RasterImage") -> bool:
        return self.width == other.width and self.height == other.height

    @classmethod
    def full(cls, width: int, height: int, value: bool = False) -> "BinaryMask":
        return cls(np.full((height, width), value, dtype=bool))


CHROMA_KEY = "chroma-key"
CORNER_SAMPLE = "corner-sample"


@dataclass(frozen=True)
class BackgroundModel:
    """Uniform-backdrop model used to split foreground from background.

    ``chroma-key`` compares each pixel against an explicit key color;
    ``corner-sample`` estimates the key color as the per-channel mean of
    the four corner pixels (for pre-cropped shots where the backdrop
    color is unknown). A pixel is background when its RGB euclidean
    distance to the key color is <= tolerance.
    """

    mode: str
    key_color: tuple[int, int, int] | None = None
    tolerance: float = 40.0

    def __post_init__(self):
        if self.mode not in (CHROMA_KEY, CORNER_SAMPLE):
            raise ValueError(f"unknown background mode: {self.mode!r}")
        if self.mode == CHROMA_KEY and self.key_color is None:
            raise ValueError("chroma-key mode requires key_color")
        if not (0.0 <= self.tolerance <= MAX_RGB_DISTANCE):
            raise ValueError(f"tolerance must lie in [0, {MAX_RGB_DISTANCE:.2f}]")

    @classmethod
    def chroma_key(cls, key_color: tuple[int, int, int], tolerance: float = 40.0) -> "BackgroundModel":
        return cls(mode=CHROMA_KEY, key_color=tuple(key_color), tolerance=tolerance)

    @classmethod
    def corner_sample(cls, tolerance: float = 40.0) -> "BackgroundModel":
        return cls(mode=CORNER_SAMPLE, tolerance=tolerance)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: str
    mask_path: str


@dataclass(frozen=True)
class DatasetManifest:
    """Validated list of (id, image, ground-truth mask) entries."""

    entries: tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def entry(self, entry_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)


def load_image(path: str | os.PathLike) -> RasterImage:
    """Decode an 8-bit RGB or RGBA PNG; the alpha channel is dropped.

    Raises FileNotFoundError for a missing file and DecodeError for
    anything that is not a supported PNG.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise DecodeError(f"{path}: not a PNG file (format={im.format})")
            if im.mode not in ("RGB", "RGBA"):
                raise DecodeError(f"{path}: unsupported PNG mode {im.mode!r}, need 8-bit RGB or RGBA")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DecodeError(f"{path}: cannot decode image: {exc}") from exc
    return RasterImage(arr)


def save_image(img: RasterImage, path: str | os.PathLike) -> None:
    """Write an image as RGB PNG. Output bytes are deterministic."""
    Image.fromarray(img.array, mode="RGB").save(os.fspath(path), format="PNG")


def mask_from_image(img: RasterImage, threshold: int = 128) -> BinaryMask:
    """Threshold an image into a mask: True where luma >= threshold.

    Reading back a pure black/white mask PNG with the default threshold
    reproduces the original mask bit-exactly.
    """
    return BinaryMask(to_grayscale(img) >= threshold)


def remove_background(img: RasterImage, model: BackgroundModel) -> BinaryMask:
    """Estimate the foreground mask by subtracting a uniform background.

    A pixel is background iff its RGB euclidean distance to the model
    color is <= tolerance; everything else is foreground (True).
    """
    if model.mode == CORNER_SAMPLE:
        if img.width < 2 or img.height < 2:
            raise ValueError("corner-sample mode needs an image of at least 2x2")
        corners = img.array[[0, 0, -1, -1], [0, -1, 0, -1]].astype(np.float64)
        key = corners.mean(axis=0)
    else:
        key = np.asarray(model.key_color, dtype=np.float64)
    diff = img.array.astype(np.float64) - key
    dist = np.sqrt((diff * diff).sum(axis=2))
    return BinaryMask(dist > model.tolerance)


def to_grayscale(img: RasterImage) -> np.ndarray:
    """Convert to single-channel luma, one uint8 per pixel.

    luma = round(0.299*R + 0.587*G + 0.114*B); rounding is half-up so a
    gray pixel (v, v, v) maps back to exactly v.
    """
    wr, wg, wb = LUMA_WEIGHTS
    a = img.array.astype(np.float64)
    luma = wr * a[:, :, 0] + wg * a[:, :, 1] + wb * a[:, :, 2]
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Format: JSON object {"entries": [{"id": "a", "image": "...", "mask": "..."}]}
    with paths resolved relative to the manifest file. Every entry must
    reference loadable PNGs whose dimensions agree; all problems are
    collected and reported together in a ManifestError.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise ManifestError(f'{path}: expected an object with an "entries" list')

    base = os.path.dirname(os.path.abspath(path))
    entries: list[ManifestEntry] = []
    problems: list[str] = []
    seen_ids: set[str] = set()
    for i, raw in enumerate(doc["entries"]):
        if not isinstance(raw, dict) or not all(k in raw for k in ("id", "image", "mask")):
            problems.append(f"entry #{i}: needs id, image and mask fields")
            continue
        eid = str(raw["id"])
        if eid in seen_ids:
            problems.append(f"entry {eid!r}: duplicate id")
            continue
        seen_ids.add(eid)
        image_path = os.path.join(base, str(raw["image"]))
        mask_path = os.path.join(base, str(raw["mask"]))
        try:
            img = load_image(image_path)
            mask_img = load_image(mask_path)
        except (FileNotFoundError, DecodeError) as exc:
            problems.append(f"entry {eid!r}: {exc}")
            continue
        if (img.width, img.height) != (mask_img.width, mask_img.height):
            problems.append(
                f"entry {eid!r}: dimension mismatch, image {img.width}x{img.height} "
                f"vs mask {mask_img.width}x{mask_img.height}"
            )
            continue
        entries.append(ManifestEntry(id=eid, image_path=image_path, mask_path=mask_path))

    if problems:
        raise ManifestError(f"{path}: {len(problems)} invalid entries", problems)
    return DatasetManifest(entries=tuple(entries))
