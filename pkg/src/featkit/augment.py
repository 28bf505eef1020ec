"""Geometric augmentation planning and test-time response pooling.

A :class:`TransformPlan` is geometry only: crop rectangle (or full image),
rotation about the image centre, and a horizontal-mirror flag.  Pixel
resampling is the extractor's job.  The plan semantics are: rotate the
image in place, crop in that frame, then mirror the cropped patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateImage, EmptyInput, ExtractorFailure
from .extractors import (
    ExternalProcessExtractor,
    FileBackedExtractor,
    format_region,
    run_protocol,
)
from .features import FeatureMatrix, Rect, iround
from .preprocess import l2_normalize


@dataclass(frozen=True)
class TransformPlan:
    """Crop (None means full image), rotation in degrees CCW, mirror flag."""

    crop: Rect | None = None
    rotation_degrees: float = 0.0
    mirrored: bool = False

    def __post_init__(self):
        if not -180.0 < self.rotation_degrees <= 180.0:
            raise ValueError("rotation must lie in (-180, 180] degrees")

    @property
    def is_identity(self) -> bool:
        return (
            self.crop is None
            and self.rotation_degrees == 0.0
            and not self.mirrored
        )

    def mirror_toggled(self) -> "TransformPlan":
        return replace(self, mirrored=not self.mirrored)


@dataclass(frozen=True)
class AugmentConfig:
    rotation_angles: tuple = (20.0, -20.0)
    crop_area_fraction: float = 4.0 / 9.0
    pooling: str = "sum"
    bbox_enlarge_factor: float = 1.5

    def __post_init__(self):
        if len(self.rotation_angles) != 2:
            raise ValueError("expected exactly two rotation angles")
        if not 0.0 < self.crop_area_fraction <= 1.0:
            raise ValueError("crop_area_fraction must be in (0, 1]")
        if self.pooling not in ("sum", "max"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.bbox_enlarge_factor < 1.0:
            raise ValueError("bbox_enlarge_factor must be >= 1")


def crop_rects(width: int, height: int, fraction: float) -> list:
    """Four corner crops plus a centred one, each covering ``fraction``
    of the image area (side scale sqrt(fraction) per axis, rounded)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    s = math.sqrt(fraction)
    cw, ch = iround(s * width), iround(s * height)
    if cw < 1 or ch < 1:
        raise DegenerateImage(
            f"{width}x{height} crop at fraction {fraction} collapses"
        )
    dx, dy = width - cw, height - ch
    return [
        Rect(0, 0, cw, ch),
        Rect(dx, 0, cw, ch),
        Rect(0, dy, cw, ch),
        Rect(dx, dy, cw, ch),
        Rect(dx // 2, dy // 2, cw, ch),
    ]


def augmentation_plans(width: int, height: int,
                       cfg: AugmentConfig = AugmentConfig()) -> list:
    """The 16-representation recipe: original, 5 crops, 2 rotations,
    then the mirrored copy of each, in that order."""
    base = [TransformPlan()]
    base += [TransformPlan(crop=r) for r in
             crop_rects(width, height, cfg.crop_area_fraction)]
    base += [TransformPlan(rotation_degrees=a) for a in cfg.rotation_angles]
    return base + [p.mirror_toggled() for p in base]


def positive_mirror_plans() -> list:
    """Identity plus its mirror, for positive-set doubling."""
    return [TransformPlan(), TransformPlan(mirrored=True)]


def quadrant_rects(width: int, height: int) -> list:
    """Exact 2x2 tiling; left/top tiles take the extra pixel when odd."""
    if width < 2 or height < 2:
        raise DegenerateImage(
            f"{width}x{height} image cannot be split into quadrants"
        )
    lw, th = (width + 1) // 2, (height + 1) // 2
    rw, bh = width - lw, height - th
    return [
        Rect(0, 0, lw, th),
        Rect(lw, 0, rw, th),
        Rect(0, th, lw, bh),
        Rect(lw, th, rw, bh),
    ]


def negative_expansion_plans(width: int, height: int) -> list:
    """Identity, mirror, the four quadrants, and the mirrored quadrants."""
    quads = [TransformPlan(crop=r) for r in quadrant_rects(width, height)]
    return (
        [TransformPlan(), TransformPlan(mirrored=True)]
        + quads
        + [p.mirror_toggled() for p in quads]
    )


def enlarge_bbox(rect: Rect, factor: float, width: int, height: int) -> Rect:
    """Scale a box about its centre, then clip into the image.

    Clipping shifts the centre only as far as needed to stay in bounds.
    """
    if factor < 1.0:
        raise ValueError("enlargement factor must be >= 1")
    rect.require_within(width, height)
    nw = min(iround(factor * rect.w), width)
    nh = min(iround(factor * rect.h), height)
    x = rect.x + (rect.w - nw) // 2
    y = rect.y + (rect.h - nh) // 2
    x = min(max(x, 0), width - nw)
    y = min(max(y, 0), height - nh)
    return Rect(x, y, nw, nh)


def pool_responses(scores, mode: str = "sum") -> float:
    """Fuse per-representation decision values into one score."""
    vals = np.asarray(list(scores), dtype=np.float64)
    if vals.size == 0:
        raise EmptyInput("no responses to pool")
    if mode == "sum":
        return float(vals.sum())
    if mode == "max":
        return float(vals.max())
    raise ValueError(f"unknown pooling mode {mode!r}")


def serialize_plan(plan: TransformPlan, width: int, height: int) -> str:
    """Protocol region field for a plan, e.g. ``0,0,64,64;rot=20.0;mir=1``."""
    rect = plan.crop if plan.crop is not None else Rect(0, 0, width, height)
    return format_region(rect, plan.rotation_degrees, plan.mirrored)


def plan_representation_id(sample_id: str, plan_index: int) -> str:
    """Key under which a (sample, plan) feature row is stored or looked up."""
    return f"{sample_id}#{plan_index}"


def augment_training_set(binding, samples, plans, labels):
    """Expand samples through plans into L2-normalized training rows.

    ``samples`` is a sequence of (id, image) pairs; the image entry is a
    :class:`PixelGrid` for the toy extractor, a (path, width, height)
    tuple for an external extractor, and ignored for file-backed lookups
    (which use ``id#plan_index`` keys instead).  Returns the augmented
    matrix plus the row-id -> label mapping; rows are ordered
    sample-major then by plan index.
    """
    if not plans:
        raise EmptyInput("no transform plans")
    ids, rows = [], []
    out_labels = {}
    requests = None
    if isinstance(binding, ExternalProcessExtractor):
        requests = []
    for sid, image in samples:
        if sid not in labels:
            raise ValueError(f"sample {sid!r} has no label")
        for k, plan in enumerate(plans):
            rep_id = plan_representation_id(sid, k)
            ids.append(rep_id)
            out_labels[rep_id] = labels[sid]
            if requests is not None:
                try:
                    path, w, h = image
                except (TypeError, ValueError):
                    raise ExtractorFailure(
                        "external extraction needs (path, width, height) "
                        "per sample"
                    ) from None
                requests.append((rep_id, path, serialize_plan(plan, w, h)))
            elif isinstance(binding, FileBackedExtractor):
                rows.append(binding.extract(rep_id))
            else:
                rows.append(
                    binding.extract(
                        image,
                        plan.crop,
                        rotation_degrees=plan.rotation_degrees,
                        mirrored=plan.mirrored,
                    )
                )
    if requests is not None:
        matrix = run_protocol(binding.command, requests)
        rows = [matrix.row(rep_id) for rep_id in ids]
    normalized = np.stack([l2_normalize(r) for r in rows])
    return FeatureMatrix(tuple(ids), normalized), out_labels
