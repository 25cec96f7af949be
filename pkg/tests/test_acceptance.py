"""Acceptance suite: eleven end-to-end criteria at their stated sizes and tolerances.

Each test carries ``@pytest.mark.acceptance(n, title)``; ``conftest.py`` prints
one PASS/FAIL line per criterion at the end of the run. Run on its own with
``pytest tests/test_acceptance.py``.
"""

import hashlib
import json
import math
import random
import time
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from helpers import brute_force_assignment_cost, build_trace, golden_records, mutations, random_bbox, write_jsonl
from patchcue.annotation import (
    TEMPLATE_SHA256,
    build_extraction_prompt,
    build_grounding_prompt,
    build_reasoning_prompt,
)
from patchcue.cli import main as cli_main
from patchcue.config import Settings
from patchcue.geometry import (
    PatchBBox,
    PixelBBox,
    PixelPoint,
    expand_patch_set,
    make_grid,
    pixel_bbox_to_patch_bbox,
    pixel_to_patch,
)
from patchcue.grpo import clipped_surrogate, group_advantages, kl_estimate
from patchcue.matching import assign
from patchcue.pipeline import CueCandidateSet, GroundingCandidate, consensus_filter
from patchcue.records import REWARD_FIELDS, dumps
from patchcue.rewards import CueRewardConfig, accuracy_reward, cue_reward, total_reward
from patchcue.service import create_app
from patchcue.trace import extract_cues, format_reward, parse_trace

FIXTURES = Path(__file__).parent / "fixtures"
P = 28


def axis_map(n_patches, patch, limit):
    """Pixel index -> patch index, built by walking every pixel of every patch."""
    out = {}
    for k in range(n_patches):
        for px in range(k * patch, (k + 1) * patch):
            if px < limit:
                out[px] = k
    return out


def random_grid(rng):
    rows, cols = rng.randint(1, 10), rng.randint(1, 10)
    raw_h = rng.randint((rows - 1) * P + 1, rows * P)
    raw_w = rng.randint((cols - 1) * P + 1, cols * P)
    return make_grid(raw_h, raw_w, P, P)


@pytest.mark.acceptance(1, "patch-coordinate oracle equivalence")
def test_ac1_patch_coordinate_oracle(record_property):
    rng = random.Random(1)
    mismatches = 0
    start = time.perf_counter()
    for _ in range(10_000):
        g = random_grid(rng)
        rmap = axis_map(g.rows, P, g.raw_height)
        cmap = axis_map(g.cols, P, g.raw_width)
        x, y = rng.randrange(g.raw_width), rng.randrange(g.raw_height)
        mismatches += tuple(pixel_to_patch(PixelPoint(x, y), g)) != (rmap[y], cmap[x])

        x1, x2 = sorted(rng.randrange(g.raw_width) for _ in range(2))
        y1, y2 = sorted(rng.randrange(g.raw_height) for _ in range(2))
        got = pixel_bbox_to_patch_bbox(PixelBBox(x1, y1, x2, y2), g)
        rows = {rmap[v] for v in range(y1, y2 + 1)}
        cols = {cmap[u] for u in range(x1, x2 + 1)}
        mismatches += got.as_list() != [min(rows), min(cols), max(rows), max(cols)]
    elapsed = time.perf_counter() - start
    record_property("detail", f"10000 points + 10000 boxes, {mismatches} mismatches, {elapsed:.2f} s (limit 5 s)")
    assert mismatches == 0
    assert elapsed < 5.0


@pytest.mark.acceptance(2, "containment of every pixel in the expanded patch set")
def test_ac2_containment(record_property):
    rng = random.Random(2)
    violations = pixels = 0
    for i in range(1000):
        g = random_grid(rng)
        rmap = np.array([v for _, v in sorted(axis_map(g.rows, P, g.raw_height).items())])
        cmap = np.array([v for _, v in sorted(axis_map(g.cols, P, g.raw_width).items())])
        if i % 2:
            a, b = sorted(rng.random() for _ in range(2))
            c, d = sorted(rng.random() for _ in range(2))
            box = PixelBBox(a, c, b, d, normalized=True)
            xs = range(math.floor(a * g.raw_width), min(math.floor(b * g.raw_width), g.raw_width - 1) + 1)
            ys = range(math.floor(c * g.raw_height), min(math.floor(d * g.raw_height), g.raw_height - 1) + 1)
        else:
            x1, x2 = sorted(rng.randrange(g.raw_width) for _ in range(2))
            y1, y2 = sorted(rng.randrange(g.raw_height) for _ in range(2))
            box = PixelBBox(x1, y1, x2, y2)
            xs, ys = range(x1, x2 + 1), range(y1, y2 + 1)
        cells = expand_patch_set(pixel_bbox_to_patch_bbox(box, g))
        allowed = np.zeros((g.rows, g.cols), dtype=bool)
        for r, c in cells:
            allowed[r, c] = True
        hit = allowed[np.ix_(rmap[list(ys)], cmap[list(xs)])]
        violations += int((~hit).sum())
        pixels += hit.size
    record_property("detail", f"1000 boxes, {pixels} pixels checked, {violations} violations")
    assert violations == 0


@pytest.mark.acceptance(3, "Hungarian solver against exhaustive search")
def test_ac3_hungarian_oracle(record_property):
    rng = random.Random(3)
    mismatches = 0
    start = time.perf_counter()
    for _ in range(500):
        n, m = rng.randint(1, 6), rng.randint(1, 6)
        cost = [[rng.random() for _ in range(m)] for _ in range(n)]
        mismatches += assign(cost).total_cost != brute_force_assignment_cost(cost)
    elapsed = time.perf_counter() - start
    record_property("detail", f"500 matrices up to 6x6, {mismatches} mismatches, {elapsed:.2f} s (limit 10 s)")
    assert mismatches == 0
    assert elapsed < 10.0


@pytest.mark.acceptance(4, "cue-reward case table and tau monotonicity")
def test_ac4_cue_reward_cases(record_property):
    gt2 = [PatchBBox(0, 0, 1, 1), PatchBBox(4, 4, 5, 5)]
    cases = [
        cue_reward([], []).reward == 1.0,
        cue_reward(gt2 + [PatchBBox(2, 2, 2, 2)], gt2).reward == 0.0,
        cue_reward([PatchBBox(4, 4, 5, 5)], gt2, CueRewardConfig(tau=0.5)).reward == 0.5,
    ]
    rng = random.Random(4)
    violations = 0
    taus = [t / 10 for t in range(1, 10)]
    for _ in range(100):
        gt = [random_bbox(rng, 6, 6) for _ in range(rng.randint(1, 5))]
        pred = [random_bbox(rng, 6, 6) for _ in range(rng.randint(1, len(gt)))]
        values = [cue_reward(pred, gt, CueRewardConfig(tau=t)).reward for t in taus]
        violations += sum(a < b for a, b in zip(values, values[1:]))
    record_property("detail", f"{sum(cases)}/3 branch cases exact, {violations} monotonicity violations over 100 configs")
    assert all(cases)
    assert violations == 0


@pytest.mark.acceptance(5, "reward decomposition")
def test_ac5_reward_decomposition(record_property):
    traces, truth = golden_records(1000, seed=5)
    bad = 0
    for t, g in zip(traces, truth):
        grid = make_grid(g["grid"]["height"], g["grid"]["width"])
        cues = [PatchBBox(*c) for c in g["cues"]]
        cfg = CueRewardConfig(patch_grid=grid)
        bd = total_reward(t["prediction"], g["answer"], cues, cfg)
        parsed = parse_trace(t["prediction"])
        independent = (
            bd.r_format == format_reward(t["prediction"])
            and bd.r_acc == accuracy_reward(parsed.answer_text, g["answer"])
            and bd.r_cue == cue_reward(extract_cues(parsed), cues, cfg).reward
        )
        ok = bd.r_total == bd.r_acc + bd.r_format + bd.r_cue and 0.0 <= bd.r_total <= 3.0
        bad += not (ok and independent)
    record_property("detail", f"1000 fixtures, {bad} decomposition failures")
    assert bad == 0


@pytest.mark.acceptance(6, "format-reward mutation suite")
def test_ac6_format_mutations(record_property):
    hand_built = [
        "<think>Row one has 10 flowers <cue>[[0,0],[0,9]]</cue>.</think><answer>87</answer>",
        "<think>The longest bar <cue>[[0,2],[1,9]]</cue> belongs to the label <cue>[[0,1],[1,1]]</cue>.</think>"
        "<answer>Keylor Navas</answer>",
        "<think>No region is needed here.</think><answer>yes</answer>",
        "\n<think>The heater brand <cue>[[3,4],[5,6]]</cue> is printed on top.</think>\n<answer>franz san galli</answer>\n",
    ]
    traces = hand_built + [build_trace(random.Random(s), n_cues=s % 6)[0] for s in range(50 - len(hand_built))]
    base_ok = sum(format_reward(t) == 1 for t in traces)
    total = caught = 0
    missed = []
    for t in traces:
        for kind, tag, mutated in mutations(t):
            total += 1
            if format_reward(mutated) == 0:
                caught += 1
            else:
                missed.append((kind, tag))
    record_property("detail", f"{base_ok}/50 originals score 1, {caught}/{total} mutations score 0")
    assert base_ok == 50
    assert caught == total, missed[:5]


@pytest.mark.acceptance(7, "GRPO math checks")
def test_ac7_grpo_math(record_property):
    rng = random.Random(7)
    sum_fail = invariance_fail = 0
    for _ in range(1000):
        g = rng.randint(2, 16)
        rewards = [rng.choice([0.0, 1.0, 2.0, 2.5, 3.0]) if rng.random() < 0.5 else rng.uniform(0, 3) for _ in range(g)]
        adv = group_advantages(rewards)
        n = len(rewards)
        mean = math.fsum(rewards) / n
        std = math.sqrt(math.fsum((r - mean) ** 2 for r in rewards) / n)
        if std > 1e-8:
            sum_fail += abs(math.fsum(adv)) >= 1e-9
        shift, scale = rng.uniform(-10, 10), rng.uniform(0.1, 10)
        moved = group_advantages([scale * r + shift for r in rewards])
        invariance_fail += any(abs(a - b) > 1e-9 for a, b in zip(adv, moved))

    kl_fail = 0
    for _ in range(10_000):
        new, ref = rng.uniform(-20, 0), rng.uniform(-20, 0)
        kl = kl_estimate(new, ref)
        kl_fail += kl < 0 or (abs(new - ref) > 1e-5 and kl <= 1e-12)
        kl_fail += abs(kl_estimate(new, new)) > 1e-12

    surrogate_fail = 0
    for _ in range(10_000):
        ratio, a, eps = rng.uniform(1e-3, 5), rng.uniform(-5, 5), rng.uniform(0.01, 0.5)
        surrogate_fail += clipped_surrogate(ratio, a, eps) > ratio * a
    record_property(
        "detail",
        f"sum {sum_fail}, shift/scale {invariance_fail} (1000 groups); kl {kl_fail}; "
        f"surrogate {surrogate_fail} (10000 triples) failures",
    )
    assert sum_fail == invariance_fail == kl_fail == surrogate_fail == 0


@pytest.mark.acceptance(8, "consensus-filter threshold monotonicity")
def test_ac8_consensus_monotonicity(record_property):
    rng = random.Random(8)
    thresholds = [t / 20 for t in range(21)]

    def box():
        x, y = rng.uniform(0, 60), rng.uniform(0, 60)
        return PixelBBox(x, y, x + rng.uniform(0, 39), y + rng.uniform(0, 39))

    def cset(boxes):
        return CueCandidateSet("s", "c", [GroundingCandidate(str(i), b) for i, b in enumerate(boxes)], (100, 100))

    def jitter(b):
        # Grow by up to 5 px per side so the box stays valid; some pairs agree, some do not.
        return PixelBBox(max(0, b.x1 - rng.uniform(0, 5)), max(0, b.y1 - rng.uniform(0, 5)),
                         min(99, b.x2 + rng.uniform(0, 5)), min(99, b.y2 + rng.uniform(0, 5)))

    flips = identical_rejects = 0
    for _ in range(500):
        base = box()
        boxes = [base] + [jitter(base) if rng.random() < 0.7 else box() for _ in range(rng.randint(1, 3))]
        verdicts = [consensus_filter(cset(boxes), t).accepted for t in thresholds]
        flips += sum(later and not earlier for earlier, later in zip(verdicts, verdicts[1:]))
        same = [base] * rng.randint(2, 4)
        identical_rejects += sum(not consensus_filter(cset(same), t).accepted for t in thresholds)
    record_property("detail", f"500 sets x 21 thresholds, {flips} reject->accept flips, "
                              f"{identical_rejects} identical-set rejections")
    assert flips == 0 and identical_rejects == 0


@pytest.mark.acceptance(9, "service and CLI parity")
def test_ac9_service_cli_parity(tmp_path, record_property):
    out = tmp_path / "rewards.jsonl"
    assert cli_main(["score", "--input", str(FIXTURES / "golden_traces.jsonl"),
                     "--gt", str(FIXTURES / "golden_gt.jsonl"), "--out", str(out)]) == 0
    cli_rows = [json.loads(line) for line in out.read_text().splitlines()]

    traces = [json.loads(line) for line in (FIXTURES / "golden_traces.jsonl").read_text().splitlines()]
    truth = {r["id"]: r for r in map(json.loads, (FIXTURES / "golden_gt.jsonl").read_text().splitlines())}
    batch = [
        {"id": t["id"], "prediction": t["prediction"], "grid": truth[t["id"]]["grid"],
         "ground_truth": {"answer": truth[t["id"]]["answer"], "cues": truth[t["id"]]["cues"]}}
        for t in traces
    ]
    resp = TestClient(create_app(Settings.resolve(env={}))).post("/v1/score/batch", json=batch)
    assert resp.status_code == 200
    svc_rows = resp.json()

    def fields(row):
        return dumps({k: row[k] for k in REWARD_FIELDS})

    order_ok = [r["id"] for r in svc_rows] == [t["id"] for t in traces] == [r["id"] for r in cli_rows]
    differing = sum(fields(a) != fields(b) for a, b in zip(cli_rows, svc_rows))
    record_property("detail", f"{len(batch)} records, {differing} differing reward payloads, order preserved={order_ok}")
    assert len(cli_rows) == len(svc_rows) == 200
    assert order_ok and differing == 0


@pytest.mark.acceptance(10, "prompt-template pinning")
def test_ac10_prompt_templates(record_property):
    extraction = build_extraction_prompt(
        "How many flowers are there?\nChoices: (A) 87, (B) 94, (C) 79", "87").rendered_text
    grounding = build_grounding_prompt(["heater"]).rendered_text
    reasoning = build_reasoning_prompt(
        "How many flowers are there?", "(A) 87",
        [("10 flowers in the first row", PixelBBox(0.05, 0.1, 0.95, 0.2, normalized=True))],
    ).rendered_text
    fragments = [
        "at most 5 cues" in extraction,
        "<bbox>[0.235, 0.345, 0.521, 0.876]</bbox>" in grounding,
        "The final answer is (A) 87" in reasoning,
    ]
    checksums = [
        hashlib.sha256(
            resources.files("patchcue.annotation").joinpath(f"templates/{name}.txt").read_bytes()
        ).hexdigest() == digest
        for name, digest in TEMPLATE_SHA256.items()
    ]
    record_property("detail", f"{sum(fragments)}/3 fragments present, {sum(checksums)}/{len(checksums)} checksums match")
    assert all(fragments) and all(checksums) and len(checksums) == 3


def synthetic_corpus(n=1000, seed=11):
    """Cue counts concentrated on 2-5 and mostly small cue regions."""
    rng = random.Random(seed)
    counts, weights = [1, 2, 3, 4, 5, 6, 7], [4, 26, 30, 20, 12, 5, 3]
    records = []
    for i in range(n):
        rows, cols = rng.randint(8, 16), rng.randint(8, 16)
        cues = []
        for _ in range(rng.choices(counts, weights)[0]):
            frac = rng.betavariate(1.3, 6)  # mean about 0.18
            h = max(1, min(rows, round(math.sqrt(frac) * rows)))
            w = max(1, min(cols, round(frac * rows * cols / h)))
            r, c = rng.randint(0, rows - h), rng.randint(0, cols - w)
            cues.append({"label": f"cue {len(cues)}", "patch_bbox": [r, c, r + h - 1, c + w - 1]})
        records.append({"sample_id": f"s{i}", "grid": {"height": rows * P, "width": cols * P}, "cues": cues})
    return records


@pytest.mark.acceptance(11, "cue statistics shape check")
def test_ac11_stats_shape(tmp_path, record_property):
    write_jsonl(tmp_path / "corpus.jsonl", synthetic_corpus())
    assert cli_main(["stats", "--input", str(tmp_path / "corpus.jsonl"), "--out", str(tmp_path / "stats.json"),
                     "--emit-plot-data"]) == 0
    summary = json.loads((tmp_path / "stats.json").read_text())["summary"]
    share = summary["share_samples_2_to_5_cues"]
    mass = summary["cue_area_mass_below_0.40"]
    record_property("detail", f"{share:.1%} of samples with 2-5 cues, {mass:.1%} of cue areas below 0.40 (need >= 80%)")
    assert (tmp_path / "stats.csv").exists()
    assert share >= 0.8 and mass >= 0.8


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
