"""JSON record codecs shared by the CLI and the HTTP service.

Both front ends go through :func:`score_record` and :func:`dumps`, which is
what makes their reward fields byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from patchcue.config import Settings
from patchcue.geometry import PatchBBox, PatchGrid, make_grid
from patchcue.rewards import CueRewardConfig, RewardBreakdown, total_reward

PRECISION = 6


class RecordError(ValueError):
    """Invalid input record. ``status`` follows HTTP semantics (400 / 422)."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class ScoreRequest:
    id: str
    prediction: str
    answer: str
    cues: list[PatchBBox]
    grid: PatchGrid


def _num(x: float) -> float:
    return round(float(x), PRECISION)


def dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


def _parse_grid(raw, settings: Settings, cues: list[PatchBBox]) -> PatchGrid:
    if raw is None:
        # No image size given: the smallest grid holding every ground-truth cue.
        rows = max((c.r2 for c in cues), default=0) + 1
        cols = max((c.c2 for c in cues), default=0) + 1
        p = settings.patch_size
        return make_grid(rows * p, cols * p, p, p)
    if not isinstance(raw, dict):
        raise RecordError(400, "grid must be an object")
    try:
        height, width = raw["height"], raw["width"]
        ph = raw.get("patch_h", settings.patch_size)
        pw = raw.get("patch_w", settings.patch_size)
    except KeyError as exc:
        raise RecordError(400, f"grid is missing {exc}") from None
    try:
        return make_grid(height, width, ph, pw)
    except ValueError as exc:
        raise RecordError(422, f"invalid grid: {exc}") from None


def parse_score_request(body, settings: Settings) -> ScoreRequest:
    if not isinstance(body, dict):
        raise RecordError(400, "score request must be a JSON object")
    rid = body.get("id")
    prediction = body.get("prediction")
    gt = body.get("ground_truth")
    if not isinstance(rid, (str, int)) or isinstance(rid, bool):
        raise RecordError(400, "id must be a string")
    if not isinstance(prediction, str):
        raise RecordError(400, "prediction must be a string")
    if not isinstance(gt, dict) or not isinstance(gt.get("answer"), str):
        raise RecordError(400, "ground_truth.answer must be a string")
    raw_cues = gt.get("cues", [])
    if not isinstance(raw_cues, list):
        raise RecordError(400, "ground_truth.cues must be a list")
    cues = []
    for i, c in enumerate(raw_cues):
        if not isinstance(c, list) or len(c) != 4:
            raise RecordError(400, f"ground_truth.cues[{i}] must be [r1, c1, r2, c2]")
        try:
            cues.append(PatchBBox(*c))
        except (TypeError, ValueError) as exc:
            raise RecordError(422, f"ground_truth.cues[{i}]: {exc}") from None
    grid = _parse_grid(body.get("grid"), settings, cues)
    for i, c in enumerate(cues):
        if not grid.contains(c):
            raise RecordError(422, f"ground_truth.cues[{i}] outside {grid.rows}x{grid.cols} grid")
    return ScoreRequest(str(rid), prediction, gt["answer"], cues, grid)


def breakdown_to_dict(rid: str, bd: RewardBreakdown) -> dict:
    return {
        "id": rid,
        "r_acc": _num(bd.r_acc),
        "r_format": _num(bd.r_format),
        "r_cue": _num(bd.r_cue),
        "r_total": _num(bd.r_total),
        "successful_matches": bd.successful_matches,
        "matches": [
            {"pred_index": m.pred_index, "gt_index": m.gt_index, "f1": _num(m.f1),
             "successful": m.successful}
            for m in bd.match_details
        ],
        "diagnostics": list(bd.diagnostics),
    }


def score_record(body, settings: Settings) -> dict:
    """Score one request body; raises :class:`RecordError` on invalid input."""
    req = parse_score_request(body, settings)
    cfg = CueRewardConfig(tau=settings.tau, patch_grid=req.grid)
    return breakdown_to_dict(req.id, total_reward(req.prediction, req.answer, req.cues, cfg))


def error_record(rid, exc: RecordError) -> dict:
    return {"id": rid, "error": {"status": exc.status, "detail": str(exc)}}


REWARD_FIELDS = ("r_acc", "r_format", "r_cue", "r_total", "successful_matches", "matches")
