"""Prompt-point generation and redundancy removal.

A prompt is a labeled pixel location that seeds segmentation. Grid
prompts come from a regular rows x cols lattice over the image; the
operator can add custom foreground/background prompts later. Visually
redundant grid prompts are removed by comparing mean-RGB patch
descriptors: the default is a greedy scan that keeps a prompt only when
it is farther than a threshold from every prompt kept so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .imaging import BinaryMask, RasterImage

FOREGROUND = "fg"
BACKGROUND = "bg"

GREEDY = "greedy"
CLUSTER = "cluster"


class PromptError(Exception):
    pass


class OutOfBoundsError(PromptError):
    """Prompt coordinates fall outside the image."""


@dataclass(frozen=True)
class PromptPoint:
    """A labeled point with a mean-RGB descriptor of its k x k patch."""

    x: int
    y: int
    label: str = FOREGROUND
    descriptor: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.label not in (FOREGROUND, BACKGROUND):
            raise ValueError(f"label must be {FOREGROUND!r} or {BACKGROUND!r}")


@dataclass(frozen=True)
class PromptGridConfig:
    rows: int = 16
    cols: int = 16
    patch_size: int = 7
    dedup_threshold: float = 12.0
    dedup_mode: str = GREEDY

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least 1 row and 1 column")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 1")
        if self.dedup_threshold < 0:
            raise ValueError("dedup_threshold must be >= 0")
        if self.dedup_mode not in (GREEDY, CLUSTER):
            raise ValueError(f"dedup_mode must be {GREEDY!r} or {CLUSTER!r}")


@dataclass(frozen=True)
class PromptSet:
    """Prompt list that survived dedup, in original scan order.

    ``generated_count`` records how many grid prompts existed before
    dedup. Custom prompts appended via merge_custom_prompts are not
    subject to dedup and always stay at the end.
    """

    kept: tuple[PromptPoint, ...] = field(default_factory=tuple)
    generated_count: int = 0

    def foreground(self) -> list[PromptPoint]:
        return [p for p in self.kept if p.label == FOREGROUND]

    def background(self) -> list[PromptPoint]:
        return [p for p in self.kept if p.label == BACKGROUND]


def descriptor_distance(a: tuple[float, float, float], b: tuple[float, float, float]) -> float:
    return math.dist(a, b)


def compute_descriptor(img: RasterImage, x: int, y: int, patch_size: int) -> tuple[float, float, float]:
    """Per-channel mean over the patch centered at (x, y).

    The window is clamped to the image bounds, so it shrinks at edges.
    """
    if not (0 <= x < img.width and 0 <= y < img.height):
        raise OutOfBoundsError(f"({x}, {y}) outside {img.width}x{img.height} image")
    if patch_size < 1 or patch_size % 2 == 0:
        raise ValueError("patch_size must be odd and >= 1")
    r = patch_size // 2
    window = img.array[max(0, y - r): y + r + 1, max(0, x - r): x + r + 1]
    mean = window.reshape(-1, 3).mean(axis=0)
    return (float(mean[0]), float(mean[1]), float(mean[2]))


def make_prompt(img: RasterImage, x: int, y: int, label: str, patch_size: int = 7) -> PromptPoint:
    """Build a prompt at (x, y), validating bounds and filling the descriptor."""
    return PromptPoint(x=x, y=y, label=label, descriptor=compute_descriptor(img, x, y, patch_size))


def generate_grid(img: RasterImage, cfg: PromptGridConfig, fg_mask: BinaryMask) -> list[PromptPoint]:
    """Foreground prompts at the centers of a regular rows x cols grid.

    Cell centers are floor((j + 0.5) * width / cols) by
    floor((i + 0.5) * height / rows), visited row-major. Prompts whose
    center lands on removed background (fg_mask False) are dropped.
    """
    if not fg_mask.same_shape(img):
        raise ValueError("fg_mask dimensions must match the image")
    out: list[PromptPoint] = []
    for i in range(cfg.rows):
        y = int((i + 0.5) * img.height // cfg.rows)
        for j in range(cfg.cols):
            x = int((j + 0.5) * img.width // cfg.cols)
            if not fg_mask.bits[y, x]:
                continue
            out.append(make_prompt(img, x, y, FOREGROUND, cfg.patch_size))
    return out


def dedup_prompts(prompts: list[PromptPoint], threshold: float, mode: str = GREEDY) -> PromptSet:
    """Drop visually redundant prompts.

    Greedy mode keeps the first prompt unconditionally, then keeps each
    later prompt iff its minimum descriptor distance to every prompt
    kept so far strictly exceeds the threshold.

    Cluster mode instead groups prompts by single-linkage at the
    threshold (edges where distance <= threshold) and keeps one
    representative per group: the member closest to the group's mean
    descriptor. Representatives are reported in scan order.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    if not prompts:
        return PromptSet(kept=(), generated_count=0)
    if mode == GREEDY:
        kept = _dedup_greedy(prompts, threshold)
    elif mode == CLUSTER:
        kept = _dedup_cluster(prompts, threshold)
    else:
        raise ValueError(f"unknown dedup mode {mode!r}")
    return PromptSet(kept=tuple(kept), generated_count=len(prompts))


def _dedup_greedy(prompts: list[PromptPoint], threshold: float) -> list[PromptPoint]:
    kept = [prompts[0]]
    kept_desc = [prompts[0].descriptor]
    for p in prompts[1:]:
        dmin = min(descriptor_distance(p.descriptor, d) for d in kept_desc)
        if dmin > threshold:
            kept.append(p)
            kept_desc.append(p.descriptor)
    return kept


def _dedup_cluster(prompts: list[PromptPoint], threshold: float) -> list[PromptPoint]:
    n = len(prompts)
    desc = np.array([p.descriptor for p in prompts], dtype=np.float64)
    # Single-linkage components over the <= threshold graph, via union-find.
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    diff = desc[:, None, :] - desc[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i, j] <= threshold:
                ra, rb = find(i), find(j)
                if ra != rb:
                    parent[rb] = ra

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)

    reps: list[int] = []
    for members in groups.values():
        center = desc[members].mean(axis=0)
        d_to_center = np.sqrt(((desc[members] - center) ** 2).sum(axis=1))
        reps.append(members[int(np.argmin(d_to_center))])
    return [prompts[i] for i in sorted(reps)]


def merge_custom_prompts(base: PromptSet, custom: list[PromptPoint]) -> PromptSet:
    """Append operator prompts after the kept grid prompts.

    Custom prompts bypass dedup entirely and keep their given order, so
    a custom point may duplicate a kept location.
    """
    return replace(base, kept=base.kept + tuple(custom))


def prompts_to_json(prompts: list[PromptPoint] | tuple[PromptPoint, ...]) -> list[dict]:
    """Wire format shared by the service, the UI and external backends."""
    return [{"x": int(p.x), "y": int(p.y), "label": p.label} for p in prompts]


def prompts_from_json(items: list[dict], img: RasterImage | None = None, patch_size: int = 7) -> list[PromptPoint]:
    """Parse the wire format; descriptors are filled when img is given."""
    out = []
    for item in items:
        x, y, label = int(item["x"]), int(item["y"]), str(item["label"])
        if img is not None:
            out.append(make_prompt(img, x, y, label, patch_size))
        else:
            out.append(PromptPoint(x=x, y=y, label=label))
    return out
