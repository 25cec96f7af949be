"""Cue-data construction stages: difficulty filters, grounding consensus, statistics."""

from __future__ import annotations

import itertools
import logging
import re
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from patchcue.geometry import (
    DEFAULT_PATCH_SIZE,
    PatchBBox,
    PatchGrid,
    PixelBBox,
    iou,
    make_grid,
    pixel_bbox_to_patch_bbox,
)
from patchcue.trace import format_cue_payload

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.5
AREA_BINS = 20  # bin width 0.05

KEEP = "keep"
DROP = "drop"


@dataclass(frozen=True)
class AttemptRecord:
    sample_id: str
    attempts: tuple[bool, ...]

    def __post_init__(self) -> None:
        if not self.attempts:
            raise ValueError(f"sample {self.sample_id!r} has no attempts")

    @classmethod
    def from_dict(cls, d: dict) -> AttemptRecord:
        attempts = d["attempts"]
        if not isinstance(attempts, list) or not all(isinstance(a, bool) for a in attempts):
            raise ValueError("attempts must be a list of booleans")
        return cls(str(d["sample_id"]), tuple(attempts))


def sft_difficulty_filter(record: AttemptRecord) -> str:
    """Drop samples the base model already answers correctly on every attempt."""
    return DROP if all(record.attempts) else KEEP


def rl_difficulty_filter(record: AttemptRecord) -> str:
    """Keep only samples with mixed outcomes; uniform groups carry no signal."""
    if all(record.attempts) or not any(record.attempts):
        return DROP
    return KEEP


@dataclass(frozen=True)
class GroundingCandidate:
    source: str
    bbox: PixelBBox


@dataclass
class CueCandidateSet:
    sample_id: str
    label: str
    candidates: list[GroundingCandidate]
    image_dims: tuple[int, int]  # (H, W)


@dataclass
class ConsensusResult:
    accepted: bool
    patch_bbox: PatchBBox | None = None
    fused_bbox: PixelBBox | None = None
    min_iou: float | None = None
    reason: str | None = None
    diagnostics: list[str] = field(default_factory=list)


def pairwise_ious(boxes: Sequence[PixelBBox]) -> list[float]:
    return [iou(a, b) for a, b in itertools.combinations(boxes, 2)]


def fuse_boxes(boxes: Sequence[PixelBBox]) -> PixelBBox:
    """Coordinate-wise median of the candidate boxes."""
    return PixelBBox(
        statistics.median(b.x1 for b in boxes),
        statistics.median(b.y1 for b in boxes),
        statistics.median(b.x2 for b in boxes),
        statistics.median(b.y2 for b in boxes),
        normalized=boxes[0].normalized,
    )


def consensus_filter(
    cue: CueCandidateSet,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    patch_size: tuple[int, int] = (DEFAULT_PATCH_SIZE, DEFAULT_PATCH_SIZE),
) -> ConsensusResult:
    """Accept a cue only if every pair of grounders agrees at ``iou_threshold``.

    Accepted cues are fused by coordinate-wise median and binned onto the
    sample's patch grid.
    """
    if not cue.candidates:
        raise ValueError(f"cue {cue.label!r} has no candidates")
    boxes = [c.bbox for c in cue.candidates]
    if len({b.normalized for b in boxes}) > 1:
        raise ValueError(f"cue {cue.label!r} mixes normalized and absolute boxes")

    diagnostics = []
    if len(boxes) == 1:
        msg = f"cue {cue.label!r}: single grounding candidate, consensus not checked"
        logger.warning(msg)
        diagnostics.append(msg)
    ious = pairwise_ious(boxes)
    min_iou = min(ious) if ious else 1.0
    if min_iou < iou_threshold:
        return ConsensusResult(False, min_iou=min_iou, reason="iou_below_threshold",
                               diagnostics=diagnostics)

    fused = fuse_boxes(boxes)
    height, width = cue.image_dims
    grid = make_grid(height, width, *patch_size)
    try:
        pb = pixel_bbox_to_patch_bbox(fused, grid)
    except ValueError as exc:
        return ConsensusResult(False, fused_bbox=fused, min_iou=min_iou, reason="bbox_out_of_image",
                               diagnostics=diagnostics + [str(exc)])
    return ConsensusResult(True, pb, fused, min_iou, diagnostics=diagnostics)


def candidate_sets_from_record(record: dict) -> list[CueCandidateSet]:
    """Parse the cue-candidate JSONL schema into per-cue candidate sets."""
    image = record["image"]
    dims = (int(image["height"]), int(image["width"]))
    sets = []
    for cue in record.get("cues", []):
        candidates = [
            GroundingCandidate(
                str(c.get("source", "")),
                PixelBBox(*(float(v) for v in c["bbox"]), normalized=bool(c.get("normalized", False))),
            )
            for c in cue["candidates"]
        ]
        sets.append(CueCandidateSet(str(record["sample_id"]), str(cue["label"]), candidates, dims))
    return sets


def consensus_record(
    record: dict,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    patch_size: tuple[int, int] = (DEFAULT_PATCH_SIZE, DEFAULT_PATCH_SIZE),
) -> tuple[bool, dict]:
    """Run consensus over every cue of a sample.

    Cues are judged one by one; the sample is accepted only if all of them
    pass. Rejected samples still list the cues that survived.
    """
    sample_id = record.get("sample_id")
    out: dict = {"sample_id": sample_id, "cues": [], "rejected": []}
    try:
        image = record["image"]
        grid = make_grid(int(image["height"]), int(image["width"]), *patch_size)
        sets = candidate_sets_from_record(record)
    except (KeyError, TypeError, ValueError) as exc:
        out["rejected"].append({"label": None, "reason": "invalid_record", "detail": str(exc)})
        return False, out

    out["grid"] = {
        "height": grid.raw_height, "width": grid.raw_width,
        "patch_h": grid.patch_height, "patch_w": grid.patch_width,
    }
    diagnostics = []
    for cue in sets:
        try:
            res = consensus_filter(cue, iou_threshold, patch_size)
        except ValueError as exc:
            out["rejected"].append({"label": cue.label, "reason": "mixed_coordinate_conventions",
                                    "detail": str(exc)})
            continue
        diagnostics.extend(res.diagnostics)
        if res.accepted:
            out["cues"].append({"label": cue.label, "patch_bbox": res.patch_bbox.as_list()})
        else:
            entry = {"label": cue.label, "reason": res.reason}
            if res.min_iou is not None:
                entry["min_iou"] = round(res.min_iou, 6)
            out["rejected"].append(entry)
    if not sets:
        out["rejected"].append({"label": None, "reason": "no_cues"})
    if diagnostics:
        out["diagnostics"] = diagnostics
    return not out["rejected"], out


@dataclass
class DatasetStats:
    cue_count_histogram: Counter = field(default_factory=Counter)
    area_bin_counts: Counter = field(default_factory=Counter)  # bin index -> count
    num_samples: int = 0
    num_cues: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def merge(self, other: DatasetStats) -> DatasetStats:
        return DatasetStats(
            self.cue_count_histogram + other.cue_count_histogram,
            self.area_bin_counts + other.area_bin_counts,
            self.num_samples + other.num_samples,
            self.num_cues + other.num_cues,
            self.diagnostics + other.diagnostics,
        )

    @property
    def area_fraction_histogram(self) -> dict[str, int]:
        return {_bin_label(i): self.area_bin_counts[i] for i in sorted(self.area_bin_counts)}

    def cue_count_share(self, lo: int, hi: int) -> float:
        """Fraction of samples with between ``lo`` and ``hi`` cues (inclusive)."""
        if not self.num_samples:
            return 0.0
        hits = sum(n for count, n in self.cue_count_histogram.items() if lo <= count <= hi)
        return hits / self.num_samples

    def area_mass_below(self, edge: float) -> float:
        """Fraction of cues whose area bin lies entirely below ``edge``."""
        if not self.num_cues:
            return 0.0
        limit = round(edge * AREA_BINS)
        return sum(n for i, n in self.area_bin_counts.items() if i < limit) / self.num_cues

    def to_dict(self) -> dict:
        return {
            "num_samples": self.num_samples,
            "num_cues": self.num_cues,
            "cue_count_histogram": {str(k): self.cue_count_histogram[k]
                                    for k in sorted(self.cue_count_histogram)},
            "area_fraction_histogram": self.area_fraction_histogram,
            "area_bin_width": 1 / AREA_BINS,
            "diagnostics": self.diagnostics,
        }


def _bin_label(i: int) -> str:
    return f"{i / AREA_BINS:.2f}-{(i + 1) / AREA_BINS:.2f}"


def area_bin(pb: PatchBBox, grid: PatchGrid) -> int:
    """Histogram bin of a cue's area fraction, computed in integers.

    A fraction of exactly 1.0 falls in the last bin.
    """
    return min(pb.num_cells * AREA_BINS // grid.num_patches, AREA_BINS - 1)


def grid_from_record(record: dict, default_patch: int = DEFAULT_PATCH_SIZE) -> PatchGrid:
    if "grid" in record:
        g = record["grid"]
        ph = int(g.get("patch_h", default_patch))
        pw = int(g.get("patch_w", default_patch))
        return make_grid(int(g["height"]), int(g["width"]), ph, pw)
    if "image" in record:
        img = record["image"]
        return make_grid(int(img["height"]), int(img["width"]), default_patch, default_patch)
    raise KeyError("record has no grid")


def record_stats(record: dict, default_patch: int = DEFAULT_PATCH_SIZE) -> DatasetStats:
    stats = DatasetStats()
    sample_id = record.get("sample_id")
    try:
        grid = grid_from_record(record, default_patch)
        boxes = [PatchBBox(*c["patch_bbox"]) for c in record.get("cues", [])]
        for pb in boxes:
            if not grid.contains(pb):
                raise ValueError(f"cue {pb.as_list()} outside {grid.rows}x{grid.cols} grid")
    except (KeyError, TypeError, ValueError) as exc:
        stats.diagnostics.append(f"sample {sample_id!r} skipped: {exc}")
        return stats
    stats.num_samples = 1
    stats.num_cues = len(boxes)
    stats.cue_count_histogram[len(boxes)] += 1
    for pb in boxes:
        stats.area_bin_counts[area_bin(pb, grid)] += 1
    return stats


def dataset_stats(records: Iterable[dict], default_patch: int = DEFAULT_PATCH_SIZE) -> DatasetStats:
    total = DatasetStats()
    for record in records:
        part = record_stats(record, default_patch)
        total.cue_count_histogram.update(part.cue_count_histogram)
        total.area_bin_counts.update(part.area_bin_counts)
        total.num_samples += part.num_samples
        total.num_cues += part.num_cues
        total.diagnostics.extend(part.diagnostics)
    return total


_BBOX_TAG = re.compile(r"<bbox>\s*\[([^\]]*)\]\s*</bbox>")


def reasoning_to_trace(reasoning: str, answer: str, grid: PatchGrid) -> str:
    """Turn constructed reasoning with normalized ``<bbox>`` references into a
    patch-cue training trace."""

    def to_cue(m: re.Match) -> str:
        coords = [float(v) for v in m.group(1).split(",")]
        if len(coords) != 4:
            raise ValueError(f"bbox needs 4 coordinates: {m.group(0)!r}")
        clamped = [min(max(v, 0.0), 1.0) for v in coords]
        pb = pixel_bbox_to_patch_bbox(PixelBBox(*clamped, normalized=True), grid)
        return f"<cue>{format_cue_payload(pb)}</cue>"

    think = _BBOX_TAG.sub(to_cue, reasoning.strip())
    return f"<think>{think}</think><answer>{answer.strip()}</answer>"
