"""Builders, mutators and brute-force oracles shared by the test modules."""

import itertools
import json
import math
import random
import re

from patchcue.geometry import PatchBBox

TAG = re.compile(r"</?(?:think|cue|answer)>")

WORDS = (
    "the first row has ten flowers the longest bar sits left of the label count "
    "each column then subtract empty spots so the total follows"
).split()


def random_bbox(rng, rows=8, cols=8):
    r1, r2 = sorted(rng.randrange(rows) for _ in range(2))
    c1, c2 = sorted(rng.randrange(cols) for _ in range(2))
    return PatchBBox(r1, c1, r2, c2)


def random_words(rng, lo=1, hi=8):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def build_trace(rng, n_cues=None, answer=None, lenient=False):
    """Return (text, cues, answer) for a random well-formed trace."""
    if n_cues is None:
        n_cues = rng.randint(0, 5)
    cues = [random_bbox(rng) for _ in range(n_cues)]
    parts = [random_words(rng)]
    for pb in cues:
        if lenient and rng.random() < 0.5:
            payload = f"( {pb.r1}, {pb.c1} ) - ({pb.r2},{pb.c2})"
        else:
            payload = f"[[{pb.r1},{pb.c1}],[{pb.r2},{pb.c2}]]"
        parts.append(f" <cue>{payload}</cue> ")
        parts.append(random_words(rng, 0, 6))
    answer = answer or rng.choice(["87", "yes", "(A) 87", "Keylor Navas", "6", "franz san galli"])
    ws = rng.choice(["", "\n", "  "])
    text = f"{ws}<think>{''.join(parts)}</think>{ws}<answer>{answer}</answer>{ws}"
    return text, cues, answer


def tag_spans(text):
    return [(m.start(), m.end(), m.group(0)) for m in TAG.finditer(text)]


def mutations(text):
    """Every single-tag deletion, duplication and pairwise reorder of ``text``."""
    spans = tag_spans(text)
    out = []
    for s, e, tag in spans:
        out.append(("delete", tag, text[:s] + text[e:]))
        out.append(("duplicate", tag, text[:e] + tag + text[e:]))
    for (s1, e1, t1), (s2, e2, t2) in itertools.combinations(spans, 2):
        if t1 == t2:
            continue
        swapped = text[:s1] + t2 + text[e1:s2] + t1 + text[e2:]
        out.append(("reorder", f"{t1}<->{t2}", swapped))
    return out


def brute_force_assignment_cost(cost):
    rows, cols = len(cost), len(cost[0]) if cost else 0
    if rows == 0 or cols == 0:
        return 0.0
    if rows <= cols:
        return min(
            math.fsum(cost[i][p[i]] for i in range(rows))
            for p in itertools.permutations(range(cols), rows)
        )
    return min(
        math.fsum(cost[p[j]][j] for j in range(cols))
        for p in itertools.permutations(range(rows), cols)
    )


def brute_force_cue_reward(pred, gt, tau):
    """Enumerate every injective pairing; keep the cheapest, then most successes."""
    if not pred and not gt:
        return 1.0
    if len(pred) > len(gt) or not pred:
        return 0.0

    def cells(b):
        return {(i, j) for i in range(b.r1, b.r2 + 1) for j in range(b.c1, b.c2 + 1)}

    def f1(a, b):
        tp = len(cells(a) & cells(b))
        if tp == 0:
            return 0.0
        pre = tp / len(cells(a))
        rec = tp / len(cells(b))
        return 2 * pre * rec / (pre + rec)

    best = None
    for perm in itertools.permutations(range(len(gt)), len(pred)):
        f1s = [f1(pred[i], gt[perm[i]]) for i in range(len(pred))]
        cost = round(math.fsum(1 - f for f in f1s), 9)
        k = sum(f >= tau - 1e-12 for f in f1s)
        key = (cost, -k)
        if best is None or key < best:
            best = key
    return -best[1] / len(gt)


def rng_for(seed):
    return random.Random(seed)


def golden_records(n=200, seed=2024):
    """Deterministic (traces, ground_truth) record pairs covering every scoring branch."""
    rng = random.Random(seed)
    traces, truth = [], []
    for i in range(n):
        rows, cols = rng.randint(2, 12), rng.randint(2, 12)
        gt_cues = [random_bbox(rng, rows, cols) for _ in range(rng.randint(0, 4))]
        answer = rng.choice(["87", "yes", "(A) 87", "Keylor Navas", "6", "3.5"])
        kind = rng.choice(["exact", "noisy", "extra", "prose", "broken", "wrong"])
        if kind == "exact":
            cues = gt_cues
        elif kind == "extra":
            cues = gt_cues + [random_bbox(rng, rows, cols)]
        else:
            cues = [random_bbox(rng, rows, cols) for _ in range(rng.randint(0, len(gt_cues)))]
        said = answer if kind != "wrong" else "94"
        think = random_words(rng) + "".join(
            f" <cue>[[{c.r1},{c.c1}],[{c.r2},{c.c2}]]</cue> {random_words(rng, 0, 4)}" for c in cues
        )
        text = f"<think>{think}</think><answer>{said}</answer>"
        if kind == "prose":
            text = f"I think the answer is {said}."
        elif kind == "broken":
            text = text.replace("</think>", "", 1)
        rid = f"g{i:03d}"
        grid = {"height": rows * 28 - rng.randint(0, 27), "width": cols * 28 - rng.randint(0, 27)}
        traces.append({"id": rid, "prediction": text})
        truth.append({"id": rid, "answer": answer, "cues": [c.as_list() for c in gt_cues], "grid": grid})
    return traces, truth


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
