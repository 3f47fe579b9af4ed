"""Region-proposal backends and final mask selection.

Three interchangeable backends produce confidence-scored region
proposals from an image and a prompt set:

* threshold  — luma thresholding (fixed T or Otsu), retains the darker
  region inside the foreground;
* region_grow — per-prompt color flood fill, confidence scored by how
  many foreground prompts land inside each merged region;
* external   — file-exchange adapter that shells out to a worker (for
  hooking up a pretrained promptable model without importing it).

Every backend returns the same SegmentationResult shape with proposals
sorted by confidence descending.
"""

from __future__ import annotations

import json
import os
import subprocess
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .imaging import BinaryMask, RasterImage, load_image, save_image, to_grayscale
from .prompts import BACKGROUND, FOREGROUND, PromptSet, prompts_to_json

THRESHOLD = "threshold"
REGION_GROW = "region_grow"
EXTERNAL = "external"

OTSU = "otsu"
FIXED = "fixed"

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class SegmentationError(Exception):
    pass


class ExternalBackendError(SegmentationError):
    """Worker failed, timed out, or returned a malformed response."""


@dataclass(frozen=True)
class BackendConfig:
    """Which backend to run and its knobs.

    threshold:   threshold_mode "fixed" (with fixed_threshold) or "otsu".
    region_grow: color_tol (max RGB distance to the seed descriptor) and
                 connectivity 4 or 8.
    external:    exchange_dir plus the worker command; the worker is
                 invoked with exchange_dir as its single argument.
    """

    variant: str = THRESHOLD
    threshold_mode: str = OTSU
    fixed_threshold: int = 128
    color_tol: float = 30.0
    connectivity: int = 4
    exchange_dir: str = ""
    worker_cmd: tuple[str, ...] = ()
    worker_timeout_s: float = 60.0

    def __post_init__(self):
        if self.variant not in (THRESHOLD, REGION_GROW, EXTERNAL):
            raise ValueError(f"unknown backend variant {self.variant!r}")
        if self.threshold_mode not in (OTSU, FIXED):
            raise ValueError(f"threshold_mode must be {OTSU!r} or {FIXED!r}")
        if not (0 <= self.fixed_threshold <= 255):
            raise ValueError("fixed_threshold must lie in [0, 255]")
        if self.color_tol < 0:
            raise ValueError("color_tol must be >= 0")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


@dataclass(frozen=True)
class RegionProposal:
    mask: BinaryMask
    confidence: float
    backend_id: str
    seed_prompts: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class SegmentationResult:
    proposals: tuple[RegionProposal, ...]
    final_mask: BinaryMask
    warnings: tuple[str, ...] = ()


def _sorted_proposals(proposals: list[RegionProposal]) -> tuple[RegionProposal, ...]:
    # Stable sort: ties keep backend-reported order (and thus lower
    # seed-prompt index first, since backends emit in that order).
    return tuple(sorted(proposals, key=lambda p: -p.confidence))


def select_final_mask(result: SegmentationResult, accept_threshold: float = 0.5) -> BinaryMask:
    """Union of all proposals with confidence >= accept_threshold."""
    if not (0.0 <= accept_threshold <= 1.0):
        raise ValueError("accept_threshold must lie in [0, 1]")
    bits = np.zeros((result.final_mask.height, result.final_mask.width), dtype=bool)
    for p in result.proposals:
        if p.confidence >= accept_threshold:
            bits |= p.mask.bits
    return BinaryMask(bits)


def binarize(mask: BinaryMask) -> RasterImage:
    """Render a mask as a two-color image.

    Retained (True) pixels become (255, 255, 255); removed (False)
    pixels become (0, 0, 0), which downstream marks them for cutting.
    """
    arr = np.where(mask.bits, 255, 0).astype(np.uint8)
    return RasterImage(np.repeat(arr[:, :, None], 3, axis=2))


def otsu_threshold(luma: np.ndarray, fg: np.ndarray) -> int | None:
    """Threshold maximizing between-class variance over foreground pixels.

    Classes at threshold T are {luma < T} and {luma >= T}; ties resolve
    to the lowest T. Returns None when the histogram is empty or has a
    single level, in which case no split is meaningful.
    """
    values = luma[fg]
    if values.size == 0 or np.unique(values).size < 2:
        return None
    hist = np.bincount(values, minlength=256).astype(np.float64)
    total = hist.sum()
    cum_n = np.cumsum(hist)
    cum_sum = np.cumsum(hist * np.arange(256))
    best_t, best_var = 0, -1.0
    for t in range(256):
        n0 = cum_n[t - 1] if t > 0 else 0.0
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            var = 0.0
        else:
            s0 = cum_sum[t - 1] if t > 0 else 0.0
            mu0 = s0 / n0
            mu1 = (cum_sum[255] - s0) / n1
            var = n0 * n1 * (mu0 - mu1) ** 2
        if var > best_var:
            best_var, best_t = var, t
    return best_t


def segment_threshold(img: RasterImage, fg: BinaryMask, cfg: BackendConfig) -> SegmentationResult:
    """Retain the darker area: pixels with luma < T inside the foreground."""
    if not fg.same_shape(img):
        raise ValueError("foreground mask dimensions must match the image")
    luma = to_grayscale(img)
    warnings: tuple[str, ...] = ()
    if cfg.threshold_mode == OTSU:
        t = otsu_threshold(luma, fg.bits)
        if t is None:
            t = 128
            warnings = ("otsu: foreground histogram empty or single-level, fell back to T=128",)
    else:
        t = cfg.fixed_threshold
    mask = BinaryMask((luma < t) & fg.bits)
    proposal = RegionProposal(mask=mask, confidence=1.0, backend_id=f"{THRESHOLD}:T={t}")
    result = SegmentationResult(proposals=(proposal,), final_mask=mask, warnings=warnings)
    return replace(result, final_mask=select_final_mask(result))


def _grow_region(img: RasterImage, fg_bits: np.ndarray, seed: tuple[int, int],
                 descriptor: tuple[float, float, float], color_tol: float,
                 connectivity: int) -> np.ndarray:
    """Connected component around the seed of pixels within color_tol of
    the descriptor, clipped to the foreground. Empty when the seed
    itself does not qualify."""
    x, y = seed
    diff = img.array.astype(np.float64) - np.asarray(descriptor)
    candidate = (np.sqrt((diff * diff).sum(axis=2)) <= color_tol) & fg_bits
    if not candidate[y, x]:
        return np.zeros_like(fg_bits)
    structure = FOUR_CONNECTED if connectivity == 4 else EIGHT_CONNECTED
    labels, _ = ndimage.label(candidate, structure=structure)
    return labels == labels[y, x]


def segment_region_grow(img: RasterImage, fg: BinaryMask, prompts: PromptSet,
                        cfg: BackendConfig) -> SegmentationResult:
    """Flood-fill a region per foreground prompt, merging overlapping fills.

    Each proposal's confidence is the fraction of all kept foreground
    prompts whose seed lies inside it. Background prompts grow the same
    way and their region is subtracted from every proposal.
    """
    if not fg.same_shape(img):
        raise ValueError("foreground mask dimensions must match the image")
    warnings: list[str] = []
    fg_prompts = [(i, p) for i, p in enumerate(prompts.kept) if p.label == FOREGROUND]
    bg_prompts = [(i, p) for i, p in enumerate(prompts.kept) if p.label == BACKGROUND]

    empty = BinaryMask.full(img.width, img.height, False)
    if not fg_prompts:
        return SegmentationResult(proposals=(), final_mask=empty)

    fills: list[tuple[int, np.ndarray]] = []
    for idx, p in fg_prompts:
        if not fg.bits[p.y, p.x]:
            warnings.append(f"prompt #{idx} at ({p.x}, {p.y}) sits on removed background; empty region")
            continue
        region = _grow_region(img, fg.bits, (p.x, p.y), p.descriptor, cfg.color_tol, cfg.connectivity)
        if region.any():
            fills.append((idx, region))
        else:
            warnings.append(f"prompt #{idx} at ({p.x}, {p.y}) matched no pixels; empty region")

    # Merge fills that overlap into single proposals.
    groups: list[tuple[list[int], np.ndarray]] = []
    for idx, region in fills:
        overlapping = [g for g in groups if (g[1] & region).any()]
        merged_ids = [idx]
        merged_region_bits = region
        for g in overlapping:
            groups.remove(g)
            merged_ids = g[0] + merged_ids
            merged_region_bits = merged_region_bits | g[1]
        groups.append((sorted(merged_ids), merged_region_bits))

    subtract = np.zeros_like(fg.bits)
    for idx, p in bg_prompts:
        if not fg.bits[p.y, p.x]:
            warnings.append(f"prompt #{idx} at ({p.x}, {p.y}) sits on removed background; empty region")
            continue
        subtract |= _grow_region(img, fg.bits, (p.x, p.y), p.descriptor, cfg.color_tol, cfg.connectivity)

    total_fg = len(fg_prompts)
    proposals: list[RegionProposal] = []
    for seed_ids, bits in groups:
        bits = bits & ~subtract
        supporters = sum(1 for _, p in fg_prompts if bits[p.y, p.x])
        proposals.append(RegionProposal(
            mask=BinaryMask(bits),
            confidence=supporters / total_fg,
            backend_id=REGION_GROW,
            seed_prompts=tuple(seed_ids),
        ))

    result = SegmentationResult(
        proposals=_sorted_proposals(proposals),
        final_mask=empty,
        warnings=tuple(warnings),
    )
    return replace(result, final_mask=select_final_mask(result))


def segment_external(img: RasterImage, prompts: PromptSet, cfg: BackendConfig) -> SegmentationResult:
    """Run an out-of-process segmentation worker over a file exchange.

    Writes exchange_dir/input.png and exchange_dir/prompts.json, invokes
    the worker command with exchange_dir as its sole argument, then reads
    exchange_dir/proposals.json:
        {"proposals": [{"mask": "<png path relative to exchange_dir>",
                        "score": 0.87}, ...]}
    Mask PNGs are thresholded at luma 128; scores are clamped to [0, 1].
    """
    if not cfg.exchange_dir:
        raise ValueError("external backend requires exchange_dir")
    if not cfg.worker_cmd:
        raise ValueError("external backend requires worker_cmd")
    os.makedirs(cfg.exchange_dir, exist_ok=True)
    save_image(img, os.path.join(cfg.exchange_dir, "input.png"))
    with open(os.path.join(cfg.exchange_dir, "prompts.json"), "w", encoding="utf-8") as fh:
        json.dump(prompts_to_json(prompts.kept), fh)

    cmd = list(cfg.worker_cmd) + [cfg.exchange_dir]
    try:
        proc = subprocess.run(cmd, capture_output=True, timeout=cfg.worker_timeout_s)
    except subprocess.TimeoutExpired as exc:
        raise ExternalBackendError(f"worker timed out after {cfg.worker_timeout_s}s") from exc
    if proc.returncode != 0:
        raise ExternalBackendError(
            f"worker exited with {proc.returncode}: {proc.stderr.decode(errors='replace').strip()}")

    response_path = os.path.join(cfg.exchange_dir, "proposals.json")
    try:
        with open(response_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ExternalBackendError(f"malformed response: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("proposals"), list):
        raise ExternalBackendError('malformed response: expected {"proposals": [...]}')

    proposals: list[RegionProposal] = []
    for i, item in enumerate(doc["proposals"]):
        if not isinstance(item, dict) or "mask" not in item or "score" not in item:
            raise ExternalBackendError(f"malformed response: proposal #{i} needs mask and score")
        mask_img = load_image(os.path.join(cfg.exchange_dir, str(item["mask"])))
        if (mask_img.width, mask_img.height) != (img.width, img.height):
            raise ExternalBackendError(
                f"proposal #{i}: mask is {mask_img.width}x{mask_img.height}, "
                f"image is {img.width}x{img.height}")
        score = min(1.0, max(0.0, float(item["score"])))
        bits = to_grayscale(mask_img) >= 128
        proposals.append(RegionProposal(
            mask=BinaryMask(bits), confidence=score, backend_id=EXTERNAL))

    result = SegmentationResult(
        proposals=_sorted_proposals(proposals),
        final_mask=BinaryMask.full(img.width, img.height, False),
    )
    return replace(result, final_mask=select_final_mask(result))


def run_backend(img: RasterImage, fg: BinaryMask, prompts: PromptSet,
                cfg: BackendConfig) -> SegmentationResult:
    """Dispatch to the configured backend."""
    if cfg.variant == THRESHOLD:
        return segment_threshold(img, fg, cfg)
    if cfg.variant == REGION_GROW:
        return segment_region_grow(img, fg, prompts, cfg)
    return segment_external(img, prompts, cfg)
