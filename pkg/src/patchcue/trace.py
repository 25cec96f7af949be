"""Parser and serializer for ``<think>/<cue>/<answer>`` reasoning traces.

Grammar (tags are case-sensitive)::

    trace   := WS think WS answer WS
    think   := "<think>" (TEXT | cue)* "</think>"
    cue     := "<cue>" payload "</cue>"
    answer  := "<answer>" TEXT "</answer>"       (non-blank)

Cue payloads are inclusive patch boxes. The canonical form is
``[[r1,c1],[r2,c2]]``; ``(r1,c1),(r2,c2)`` and ``(r1,c1)-(r2,c2)`` are also
accepted, with arbitrary whitespace. See docs/FORMAT.md.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from patchcue.geometry import PatchBBox

TAG_RE = re.compile(r"</?(think|cue|answer)>")

_INT = r"\s*(\d+)\s*"
_PAIR_SQ = rf"\[{_INT},{_INT}\]"
_PAIR_RD = rf"\({_INT},{_INT}\)"
_PAYLOAD_PATTERNS = (
    re.compile(rf"^\s*\[\s*{_PAIR_SQ}\s*,\s*{_PAIR_SQ}\s*\]\s*$"),
    re.compile(rf"^\s*{_PAIR_RD}\s*[,\-]\s*{_PAIR_RD}\s*$"),
    re.compile(rf"^\s*\[\s*{_PAIR_RD}\s*,\s*{_PAIR_RD}\s*\]\s*$"),
)


@dataclass(frozen=True)
class CueSpan:
    """One cue tag. ``byte_range`` spans the whole ``<cue>...</cue>`` in the
    source; ``anchor`` is where the tag sat in ``think_text``."""

    patch_bbox: PatchBBox | None
    raw_text: str
    byte_range: tuple[int, int]
    anchor: int = 0


@dataclass
class ReasoningTrace:
    think_text: str = ""
    cues: list[CueSpan] = field(default_factory=list)
    answer_text: str = ""
    well_formed: bool = False
    diagnostics: list[str] = field(default_factory=list)


def parse_cue_payload(payload: str) -> PatchBBox | None:
    """Parse a cue payload; ``None`` when it is not a valid patch box."""
    for pattern in _PAYLOAD_PATTERNS:
        m = pattern.match(payload)
        if m:
            r1, c1, r2, c2 = (int(g) for g in m.groups())
            if r1 > r2 or c1 > c2:
                return None
            return PatchBBox(r1, c1, r2, c2)
    return None


def format_cue_payload(pb: PatchBBox) -> str:
    return f"[[{pb.r1},{pb.c1}],[{pb.r2},{pb.c2}]]"


def parse_trace(text: str) -> ReasoningTrace:
    """Parse model output into a trace. Never raises.

    Malformed input yields ``well_formed=False`` with one diagnostic per
    violation; the first think block, its cues and the first answer block
    are still extracted on a best-effort basis.
    """
    if not isinstance(text, str):
        return ReasoningTrace(diagnostics=["input is not a string"])

    diags: list[str] = []
    think_parts: list[str] = []
    cues: list[CueSpan] = []
    answers: list[str] = []

    think_blocks = 0
    answer_blocks = 0
    in_think = False
    in_answer = False
    cue_open: re.Match | None = None
    answer_open: re.Match | None = None
    cursor = 0

    def outside(segment: str) -> None:
        if segment.strip():
            diags.append("stray text outside blocks")

    for m in TAG_RE.finditer(text):
        tag = m.group(0)
        segment = text[cursor:m.start()]
        cursor = m.end()

        if cue_open is not None:
            pass  # segment is cue payload, sliced out on close
        elif in_think:
            think_parts.append(segment)
        elif not in_answer:
            outside(segment)

        if cue_open is not None and tag != "</cue>":
            if tag == "<cue>":
                diags.append("nested cue tag")
                continue
            diags.append("unbalanced cue tag")
            cue_open = None

        if tag == "<think>":
            if in_think or in_answer:
                diags.append("nested think tag")
                continue
            think_blocks += 1
            if think_blocks > 1:
                diags.append("multiple think blocks")
            if answer_blocks:
                diags.append("think block after answer")
            in_think = True
        elif tag == "</think>":
            if not in_think:
                diags.append("unbalanced think tag")
                continue
            in_think = False
        elif tag == "<cue>":
            if not in_think:
                diags.append("cue outside think")
            cue_open = m
        elif tag == "</cue>":
            if cue_open is None:
                diags.append("unbalanced cue tag")
                continue
            payload = text[cue_open.end():m.start()]
            pb = parse_cue_payload(payload)
            if pb is None:
                diags.append(f"unparseable cue payload: {payload.strip()!r}")
            if in_think and think_blocks == 1:
                anchor = sum(len(p) for p in think_parts)
                cues.append(CueSpan(pb, payload, (cue_open.start(), m.end()), anchor))
            cue_open = None
        elif tag == "<answer>":
            if in_answer:
                diags.append("nested answer tag")
                continue
            if in_think:
                # Recover the answer anyway; the missing close is the violation.
                diags.append("unbalanced think tag")
                in_think = False
            answer_blocks += 1
            if answer_blocks > 1:
                diags.append("multiple answer blocks")
            if not think_blocks:
                diags.append("answer before think")
            in_answer = True
            answer_open = m
        elif tag == "</answer>":
            if not in_answer:
                diags.append("unbalanced answer tag")
                continue
            answers.append(text[answer_open.end():m.start()])
            in_answer = False

    tail = text[cursor:]
    if cue_open is not None:
        diags.append("unbalanced cue tag")
    if in_think:
        diags.append("unbalanced think tag")
        if cue_open is None:
            think_parts.append(tail)
    if in_answer:
        diags.append("unbalanced answer tag")
        answers.append(tail)
    if not in_think and not in_answer and cue_open is None:
        outside(tail)

    if think_blocks == 0:
        diags.append("missing think block")
    if answer_blocks == 0:
        diags.append("missing answer block")
    answer = answers[0].strip() if answers else ""
    if answers and not answer:
        diags.append("empty answer")

    # Keep diagnostics readable: drop repeats but preserve first-seen order.
    diags = list(dict.fromkeys(diags))
    return ReasoningTrace(
        think_text="".join(think_parts),
        cues=cues,
        answer_text=answer,
        well_formed=not diags,
        diagnostics=diags,
    )


def format_reward(text: str) -> int:
    return 1 if parse_trace(text).well_formed else 0


def extract_cues(trace: ReasoningTrace) -> list[PatchBBox]:
    """Parsed cue boxes in source order; unparseable payloads are skipped."""
    return [c.patch_bbox for c in trace.cues if c.patch_bbox is not None]


def render_trace(trace: ReasoningTrace) -> str:
    """Serialize a trace in canonical form, re-inserting cues at their anchors."""
    if not trace.answer_text.strip():
        raise ValueError("trace has no answer")
    if TAG_RE.search(trace.think_text) or TAG_RE.search(trace.answer_text):
        raise ValueError("trace text contains reserved tags")
    pieces: list[str] = []
    pos = 0
    for cue in sorted(trace.cues, key=lambda c: c.anchor):
        if cue.patch_bbox is None:
            raise ValueError(f"cue payload {cue.raw_text!r} is not a patch box")
        anchor = min(max(cue.anchor, pos), len(trace.think_text))
        pieces.append(trace.think_text[pos:anchor])
        pieces.append(f"<cue>{format_cue_payload(cue.patch_bbox)}</cue>")
        pos = anchor
    pieces.append(trace.think_text[pos:])
    return f"<think>{''.join(pieces)}</think><answer>{trace.answer_text.strip()}</answer>"


def make_trace(think_text: str, cues: list[tuple[int, PatchBBox]], answer: str) -> ReasoningTrace:
    """Build a trace value from plain think text and (anchor, bbox) pairs."""
    spans = [CueSpan(pb, format_cue_payload(pb), (0, 0), anchor) for anchor, pb in cues]
    return ReasoningTrace(think_text, spans, answer.strip(), True, [])
