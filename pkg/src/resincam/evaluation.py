"""Segmentation scoring: IoU, quality classes, summary stats, grading.

IoU is computed with integer pixel counts and only divided at the end,
so scores are exact. Percent rounding is decimal half-up (half away
from zero) at one decimal place, matching how the summary statistics
are tabulated.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

import numpy as np

from .imaging import (BinaryMask, DatasetManifest, RasterImage, load_image,
                      mask_from_image)


class EvaluationError(Exception):
    pass


def round_percent_1dp(value: float | Decimal) -> float:
    """Round to one decimal, halves away from zero."""
    d = value if isinstance(value, Decimal) else Decimal(repr(float(value)))
    return float(d.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class IoUScore:
    """Overlap-over-union ratio in [0, 1].

    When built from masks the exact integer intersection/union counts
    are kept so the derived percent cannot pick up float error.
    """

    ratio: float
    counts: tuple[int, int] | None = None

    def __post_init__(self):
        if not (0.0 <= self.ratio <= 1.0):
            raise ValueError("ratio must lie in [0, 1]")

    @classmethod
    def from_counts(cls, intersection: int, union: int) -> "IoUScore":
        if union == 0:
            # Two empty masks agree perfectly on "nothing".
            return cls(ratio=1.0, counts=(0, 0))
        return cls(ratio=intersection / union, counts=(intersection, union))

    @classmethod
    def from_percent(cls, percent: float) -> "IoUScore":
        return cls(ratio=percent / 100.0)

    @property
    def percent_1dp(self) -> float:
        if self.counts is not None:
            inter, union = self.counts
            if union == 0:
                return 100.0
            # Exact: percent tenths = round_half_up(inter * 1000 / union).
            tenths, rem = divmod(inter * 1000, union)
            if 2 * rem >= union:
                tenths += 1
            return tenths / 10.0
        return round_percent_1dp(self.ratio * 100.0)


class QualityClass(enum.Enum):
    POOR = "Poor"
    MODERATE = "Moderate"
    GOOD = "Good"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SummaryStats:
    """Min / median / average / max of a score group, percents at 1dp."""

    min: float
    median: float
    average: float
    max: float


class Grade(enum.Enum):
    SUPER_A = "Super A"
    A = "A"
    B = "B"
    C = "C"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class EvalRow:
    id: str
    width: int
    height: int
    iou: IoUScore
    quality: QualityClass


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    class_stats: Mapping[QualityClass, SummaryStats]

    def to_dict(self) -> dict:
        return {
            "images": [
                {
                    "id": r.id,
                    "resolution": f"{r.width} x {r.height}",
                    "iou_percent": r.iou.percent_1dp,
                    "quality": r.quality.value,
                }
                for r in self.rows
            ],
            "summary": {
                q.value: {
                    "min": s.min, "median": s.median, "average": s.average, "max": s.max,
                }
                for q, s in self.class_stats.items()
            },
        }

    def to_text(self) -> str:
        """Plain-text tables: per-image scores, then per-class summaries."""
        lines = [f"{'Image':<8}{'Resolution (w x h)':<20}{'IoU (%)':>9}  Quality"]
        for r in self.rows:
            lines.append(
                f"{r.id:<8}{f'{r.width} x {r.height}':<20}{r.iou.percent_1dp:>9.1f}  {r.quality.value}")
        lines.append("")
        lines.append(f"{'Quality':<12}{'Min (%)':>9}{'Med (%)':>9}{'Avg (%)':>9}{'Max (%)':>9}")
        for q in (QualityClass.GOOD, QualityClass.MODERATE, QualityClass.POOR):
            s = self.class_stats.get(q)
            if s is None:
                continue
            lines.append(f"{q.value:<12}{s.min:>9.1f}{s.median:>9.1f}{s.average:>9.1f}{s.max:>9.1f}")
        return "\n".join(lines)


def iou(pred: BinaryMask, truth: BinaryMask) -> IoUScore:
    """Intersection over union of two masks of equal dimensions.

    Defined as 1.0 when both masks are empty.
    """
    if (pred.width, pred.height) != (truth.width, truth.height):
        raise EvaluationError(
            f"dimension mismatch: {pred.width}x{pred.height} vs {truth.width}x{truth.height}")
    inter = int(np.logical_and(pred.bits, truth.bits).sum())
    union = int(np.logical_or(pred.bits, truth.bits).sum())
    return IoUScore.from_counts(inter, union)


def classify_quality(score: IoUScore) -> QualityClass:
    """Band the one-decimal percent: <40.0 Poor, 40.0-60.0 Moderate, >60.0 Good."""
    p = score.percent_1dp
    if p < 40.0:
        return QualityClass.POOR
    if p <= 60.0:
        return QualityClass.MODERATE
    return QualityClass.GOOD


def summarize(percents: Sequence[float]) -> SummaryStats:
    """Summary stats of IoU percents, each rounded to one decimal half-up.

    The median of an even-sized group is the mean of the two middle
    values; ordering (min <= median <= max, min <= average <= max) holds
    on the unrounded values. Arithmetic runs in decimal so tabulated
    one-decimal inputs stay exact.
    """
    if not percents:
        raise EvaluationError("cannot summarize an empty score list")
    dec = sorted(Decimal(repr(float(p))) for p in percents)
    n = len(dec)
    if n % 2 == 1:
        median = dec[n // 2]
    else:
        median = (dec[n // 2 - 1] + dec[n // 2]) / 2
    average = sum(dec) / n
    return SummaryStats(
        min=round_percent_1dp(dec[0]),
        median=round_percent_1dp(median),
        average=round_percent_1dp(average),
        max=round_percent_1dp(dec[-1]),
    )


# Operating points for the color-based grade rules.
GRADE_DARK_LUMA = 60.0
GRADE_LIGHT_LUMA = 170.0
GRADE_VARIETY_STD = 55.0


def grade_region(img: RasterImage, region: BinaryMask) -> Grade:
    """Assign a commercial grade from the color of the region's pixels.

    Rules, applied in order over the region pixel population:
      A       mean luma < 60 (black or shiny black resin)
      C       mean luma >= 170 with a yellow-leaning hue (R >= G > B)
      Super A mean per-channel standard deviation > 55 (a mix of colors)
      B       everything else (brown tones)

    Depends only on the multiset of region pixel colors, not on layout.
    """
    if not region.same_shape(img):
        raise EvaluationError("region dimensions must match the image")
    if region.count() == 0:
        raise EvaluationError("cannot grade an empty region")
    pixels = img.array[region.bits].astype(np.float64)
    mean_rgb = pixels.mean(axis=0)
    mean_luma = float(0.299 * mean_rgb[0] + 0.587 * mean_rgb[1] + 0.114 * mean_rgb[2])
    if mean_luma < GRADE_DARK_LUMA:
        return Grade.A
    r, g, b = mean_rgb
    if mean_luma >= GRADE_LIGHT_LUMA and r >= g > b:
        return Grade.C
    if float(pixels.std(axis=0).mean()) > GRADE_VARIETY_STD:
        return Grade.SUPER_A
    return Grade.B


def run_evaluation(manifest: DatasetManifest, predictions: Mapping[str, BinaryMask]) -> EvalReport:
    """Score every manifest entry against its ground truth.

    Every id needs a prediction; rows come out ordered by id and the
    per-class summaries cover only classes that occur.
    """
    missing = [e.id for e in manifest.entries if e.id not in predictions]
    if missing:
        raise EvaluationError(f"missing predictions for ids: {', '.join(sorted(missing))}")

    rows: list[EvalRow] = []
    for entry in sorted(manifest.entries, key=lambda e: e.id):
        truth_img = load_image(entry.mask_path)
        truth = mask_from_image(truth_img)
        pred = predictions[entry.id]
        score = iou(pred, truth)
        rows.append(EvalRow(
            id=entry.id,
            width=truth_img.width,
            height=truth_img.height,
            iou=score,
            quality=classify_quality(score),
        ))

    by_class: dict[QualityClass, list[float]] = {}
    for row in rows:
        by_class.setdefault(row.quality, []).append(row.iou.percent_1dp)
    class_stats = {q: summarize(v) for q, v in by_class.items()}
    return EvalReport(rows=tuple(rows), class_stats=class_stats)
