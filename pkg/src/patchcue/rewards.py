"""Accuracy, format and cue rewards and their sum.

The cue reward compares predicted and ground-truth patch boxes by patch-level
F1, pairs them with an optimal assignment on ``1 - F1`` and counts pairs whose
F1 clears ``tau``. Emitting more cues than the ground truth scores zero. Among equally cheap
assignments the one with the most successful pairs wins, which keeps the
reward independent of cue order.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

from patchcue.geometry import PatchBBox, PatchGrid, expand_patch_set, make_grid
from patchcue.matching import Assignment, assign
from patchcue.trace import extract_cues, parse_trace

DEFAULT_TAU = 0.5


@dataclass(frozen=True)
class MatchScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    both_empty: bool = False


@dataclass(frozen=True)
class CueRewardConfig:
    tau: float = DEFAULT_TAU
    patch_grid: PatchGrid = field(default_factory=lambda: make_grid(28, 28))

    def __post_init__(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")


class CueMatch(NamedTuple):
    pred_index: int
    gt_index: int
    f1: float
    successful: bool


class CueReward(NamedTuple):
    reward: float
    assignment: Assignment
    k: int
    matches: list[CueMatch]


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: int
    r_format: int
    r_cue: float
    r_total: float
    matches: Assignment
    successful_matches: int
    match_details: list[CueMatch] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def patch_f1(pred: frozenset, gt: frozenset) -> MatchScore:
    tp = len(pred & gt)
    fp = len(pred - gt)
    fn = len(gt - pred)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    # 2PR/(P+R) reduces to 2TP/(2TP+FP+FN); evaluated exactly, rounded once.
    f1 = float(Fraction(2 * tp, 2 * tp + fp + fn)) if tp else 0.0
    return MatchScore(tp, fp, fn, precision, recall, f1, both_empty=not pred and not gt)


def cost_matrix(pred_cues: Sequence[PatchBBox], gt_cues: Sequence[PatchBBox]) -> list[list[float]]:
    gt_sets = [expand_patch_set(g) for g in gt_cues]
    return [
        [1.0 - patch_f1(p_set, g_set).f1 for g_set in gt_sets]
        for p_set in (expand_patch_set(p) for p in pred_cues)
    ]


def cue_reward(
    pred_cues: Sequence[PatchBBox],
    gt_cues: Sequence[PatchBBox],
    cfg: CueRewardConfig | None = None,
) -> CueReward:
    cfg = cfg or CueRewardConfig()
    n_pred, n_gt = len(pred_cues), len(gt_cues)
    if n_pred == 0 and n_gt == 0:
        return CueReward(1.0, Assignment(), 0, [])
    # Over-production is zeroed outright; no prediction at all earns k = 0.
    if n_pred > n_gt or n_pred == 0:
        return CueReward(0.0, Assignment(), 0, [])

    gt_sets = [expand_patch_set(g) for g in gt_cues]
    f1s = [
        [patch_f1(expand_patch_set(p), g).f1 for g in gt_sets]
        for p in pred_cues
    ]
    cost = [[1.0 - f for f in row] for row in f1s]
    misses = [[0.0 if f >= cfg.tau else 1.0 for f in row] for row in f1s]
    assignment = assign(cost, secondary=misses)
    matches = [
        CueMatch(i, j, f1s[i][j], f1s[i][j] >= cfg.tau) for i, j in assignment.pairs
    ]
    k = sum(m.successful for m in matches)
    return CueReward(k / n_gt, assignment, k, matches)


_MC_MARKER = re.compile(r"^\(\s*[A-Za-z]\s*\)\s*")
_TRAILING_PUNCT = ".,;:!?。"


def normalize_answer(text: str) -> str:
    text = " ".join(text.split()).casefold()
    return text.rstrip(_TRAILING_PUNCT).rstrip()


_NUMBER = re.compile(r"[-+]?(?:(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d*)?|\.\d+)(?:e[-+]?\d+)?")


def _as_number(text: str) -> float | None:
    if not _NUMBER.fullmatch(text):
        return None
    value = float(text.replace(",", ""))
    return value if math.isfinite(value) else None


def accuracy_reward(pred_answer: str, gt_answer: str) -> int:
    """1 when the answers agree after rule-based normalization.

    Normalization trims and collapses whitespace, case-folds, drops trailing
    punctuation and, when *both* sides start with a choice marker such as
    ``(A)``, drops it. Numeric strings are compared with rel. tolerance 1e-6.
    """
    pred, gt = normalize_answer(pred_answer), normalize_answer(gt_answer)
    if not pred:
        return 0
    if _MC_MARKER.match(pred) and _MC_MARKER.match(gt):
        pred, gt = _MC_MARKER.sub("", pred), _MC_MARKER.sub("", gt)
    if pred == gt:
        return 1
    a, b = _as_number(pred), _as_number(gt)
    if a is not None and b is not None:
        return int(math.isclose(a, b, rel_tol=1e-6, abs_tol=0.0))
    return 0


def total_reward(
    raw_text: str,
    gt_answer: str,
    gt_cues: Sequence[PatchBBox],
    cfg: CueRewardConfig | None = None,
) -> RewardBreakdown:
    """Score one completion. The three components are computed independently."""
    cfg = cfg or CueRewardConfig()
    grid = cfg.patch_grid
    for g in gt_cues:
        if not grid.contains(g):
            raise ValueError(f"ground-truth cue {g.as_list()} outside {grid.rows}x{grid.cols} grid")

    trace = parse_trace(raw_text)
    diagnostics = list(trace.diagnostics)
    pred_cues = extract_cues(trace)
    for i, p in enumerate(pred_cues):
        if not grid.contains(p):
            diagnostics.append(f"predicted cue {i} outside grid")

    r_format = 1 if trace.well_formed else 0
    r_acc = accuracy_reward(trace.answer_text, gt_answer)
    cue = cue_reward(pred_cues, gt_cues, cfg)
    r_total = r_acc + r_format + cue.reward
    return RewardBreakdown(
        r_acc=r_acc,
        r_format=r_format,
        r_cue=cue.reward,
        r_total=r_total,
        matches=cue.assignment,
        successful_matches=cue.k,
        match_details=cue.matches,
        diagnostics=diagnostics,
    )
