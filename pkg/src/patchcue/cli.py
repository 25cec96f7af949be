"""Command-line front end: score, convert, filter, stats, grpo, serve.

Exit codes: 0 success, 1 strict-mode record errors or bind failure,
2 I/O failure. Every flag also reads a ``PATCHCUE_*`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import socket
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import ExitStack
from pathlib import Path
from typing import Callable, Iterable, Iterator

from patchcue.config import Settings
from patchcue.geometry import (
    PatchBBox,
    PixelBBox,
    patch_bbox_to_pixel_bbox,
    pixel_bbox_to_patch_bbox,
)
from patchcue.grpo import GrpoConfig, group_from_record, grpo_objective
from patchcue.pipeline import (
    DROP,
    AttemptRecord,
    consensus_record,
    dataset_stats,
    grid_from_record,
    rl_difficulty_filter,
    sft_difficulty_filter,
)
from patchcue.records import RecordError, dumps, error_record, score_record

logger = logging.getLogger("patchcue")

EXIT_OK, EXIT_RECORD_ERRORS, EXIT_IO = 0, 1, 2
CHUNK = 512


def _read_jsonl(path: str) -> Iterator[tuple[int, dict | None, str | None]]:
    """Yield (line_no, record, error) for each non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield n, json.loads(line), None
            except json.JSONDecodeError as exc:
                yield n, None, f"line {n}: invalid JSON ({exc.msg})"


def _write(fh, obj) -> None:
    fh.write(dumps(obj) + "\n")


def _parallel_map(fn: Callable, items: Iterable, workers: int) -> Iterator:
    """Order-preserving map, chunked so inputs are streamed."""
    it = iter(items)
    if workers <= 1:
        yield from map(fn, it)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        while chunk := list(itertools.islice(it, CHUNK)):
            yield from pool.map(fn, chunk, chunksize=max(1, len(chunk) // (workers * 4)))


# -- score -------------------------------------------------------------------

def _score_one(args: tuple[dict, Settings]) -> dict:
    body, settings = args
    try:
        return score_record(body, settings)
    except RecordError as exc:
        return error_record(body.get("id"), exc)


def _score_inputs(path: str, gt: dict[str, dict], settings: Settings) -> Iterator[dict | tuple]:
    for n, rec, err in _read_jsonl(path):
        if err:
            yield {"id": None, "error": {"status": 400, "detail": err}}
            continue
        rid = rec.get("id") if isinstance(rec, dict) else None
        truth = gt.get(str(rid))
        if truth is None:
            yield {"id": rid, "error": {"status": 404, "detail": f"line {n}: no ground truth for id {rid!r}"}}
            continue
        body = {
            "id": rid,
            "prediction": rec.get("prediction"),
            "ground_truth": {"answer": truth.get("answer"), "cues": truth.get("cues", [])},
        }
        grid = rec.get("grid", truth.get("grid"))
        if grid is not None:
            body["grid"] = grid
        yield body, settings


def _load_gt(path: str) -> dict[str, dict]:
    gt = {}
    for n, rec, err in _read_jsonl(path):
        if err or not isinstance(rec, dict) or "id" not in rec:
            logger.warning("ground truth %s line %d skipped", path, n)
            continue
        gt[str(rec["id"])] = rec
    return gt


def _passthrough_or_score(item):
    return item if isinstance(item, dict) else _score_one(item)


def cmd_score(args: argparse.Namespace, settings: Settings) -> int:
    gt = _load_gt(args.gt)
    n = errors = 0
    sums = dict.fromkeys(("r_acc", "r_format", "r_cue", "r_total"), 0.0)
    with open(args.out, "w", encoding="utf-8") as out:
        items = _score_inputs(args.input, gt, settings)
        for result in _parallel_map(_passthrough_or_score, items, settings.parallelism):
            _write(out, result)
            if "error" in result:
                errors += 1
                continue
            n += 1
            for k in sums:
                sums[k] += result[k]
    means = {k: (v / n if n else 0.0) for k, v in sums.items()}
    print(
        f"scored {n} records, {errors} errors; mean r_total={means['r_total']:.4f} "
        f"r_acc={means['r_acc']:.4f} r_format={means['r_format']:.4f} r_cue={means['r_cue']:.4f}",
        file=sys.stderr,
    )
    return EXIT_RECORD_ERRORS if args.strict and errors else EXIT_OK


# -- convert -----------------------------------------------------------------

def _convert_one(rec: dict, mode: str, patch_size: int) -> dict:
    grid = grid_from_record(rec, patch_size)
    out = dict(rec)
    if mode == "pixel2patch":
        box = PixelBBox(*rec["bbox"], normalized=bool(rec.get("normalized", False)))
        out["patch_bbox"] = pixel_bbox_to_patch_bbox(box, grid).as_list()
    else:
        box = patch_bbox_to_pixel_bbox(PatchBBox(*rec["patch_bbox"]), grid)
        out["bbox"] = [int(v) for v in box.as_list()]
        out["normalized"] = False
    return out


def cmd_convert(args: argparse.Namespace, settings: Settings) -> int:
    errors = 0
    with open(args.out, "w", encoding="utf-8") as out:
        for n, rec, err in _read_jsonl(args.input):
            if err is None:
                try:
                    _write(out, _convert_one(rec, args.mode, settings.patch_size))
                    continue
                except (KeyError, TypeError, ValueError) as exc:
                    err = f"line {n}: {exc}"
            errors += 1
            base = rec if isinstance(rec, dict) else {}
            _write(out, {**base, "error": err})
    print(f"converted with {errors} errors", file=sys.stderr)
    return EXIT_RECORD_ERRORS if args.strict and errors else EXIT_OK


# -- filter ------------------------------------------------------------------

def _filter_attempts(rec: dict, mode: str) -> tuple[bool, dict]:
    record = AttemptRecord.from_dict(rec)
    decide = sft_difficulty_filter if mode == "sft" else rl_difficulty_filter
    if decide(record) != DROP:
        return True, rec
    reason = "all_correct" if all(record.attempts) else "all_incorrect"
    return False, {**rec, "reason": reason}


def cmd_filter(args: argparse.Namespace, settings: Settings) -> int:
    kept = rejected = 0
    patch = (settings.patch_size, settings.patch_size)
    with open(args.out, "w", encoding="utf-8") as keep_fh, ExitStack() as stack:
        rej_fh = stack.enter_context(open(args.rejected, "w", encoding="utf-8")) if args.rejected else None
        for n, rec, err in _read_jsonl(args.input):
            if err is None:
                try:
                    if args.mode == "consensus":
                        ok, out = consensus_record(rec, settings.iou_threshold, patch)
                    else:
                        ok, out = _filter_attempts(rec, args.mode)
                except (KeyError, TypeError, ValueError, AttributeError) as exc:
                    ok, out = False, {"record": rec, "reason": "invalid_record", "detail": str(exc)}
            else:
                ok, out = False, {"reason": "invalid_record", "detail": err}
            if ok:
                kept += 1
                _write(keep_fh, out)
            else:
                rejected += 1
                if rej_fh:
                    _write(rej_fh, out)
    print(f"{args.mode} filter: kept {kept}, rejected {rejected}", file=sys.stderr)
    return EXIT_OK


# -- stats -------------------------------------------------------------------

def cmd_stats(args: argparse.Namespace, settings: Settings) -> int:
    def records():
        for n, rec, err in _read_jsonl(args.input):
            yield rec if err is None else {"sample_id": f"line {n}"}

    stats = dataset_stats(records(), settings.patch_size)
    report = stats.to_dict()
    report["summary"] = {
        "share_samples_2_to_5_cues": stats.cue_count_share(2, 5),
        "cue_area_mass_below_0.40": stats.area_mass_below(0.40),
    }
    Path(args.out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    if args.emit_plot_data:
        csv_path = Path(args.out).with_suffix(".csv")
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["histogram", "bin", "count"])
            for k, v in report["cue_count_histogram"].items():
                w.writerow(["cue_count", k, v])
            for k, v in report["area_fraction_histogram"].items():
                w.writerow(["area_fraction", k, v])
    s = report["summary"]
    print(
        f"{stats.num_samples} samples, {stats.num_cues} cues; "
        f"{s['share_samples_2_to_5_cues']:.1%} with 2-5 cues, "
        f"{s['cue_area_mass_below_0.40']:.1%} of cue areas below 0.40",
        file=sys.stderr,
    )
    return EXIT_OK


# -- grpo --------------------------------------------------------------------

def _grpo_one(args: tuple[dict, GrpoConfig]) -> dict:
    rec, cfg = args
    gid = rec.get("group_id") if isinstance(rec, dict) else None
    try:
        res = grpo_objective(group_from_record(rec), cfg)
    except (KeyError, TypeError, ValueError) as exc:
        return {"group_id": gid, "error": str(exc)}
    return {
        "group_id": gid,
        "advantages": res.advantages,
        "objective": res.objective,
        "mean_kl": res.mean_kl,
    }


def cmd_grpo(args: argparse.Namespace, settings: Settings) -> int:
    cfg = GrpoConfig(settings.epsilon, settings.beta, settings.std_floor)

    def items():
        for n, rec, err in _read_jsonl(args.input):
            yield ({"group_id": None, "error": err} if err else (rec, cfg))

    errors = 0
    with open(args.out, "w", encoding="utf-8") as out:
        for result in _parallel_map(_grpo_passthrough, items(), settings.parallelism):
            errors += "error" in result
            _write(out, result)
    print(f"grpo: {errors} group errors", file=sys.stderr)
    return EXIT_RECORD_ERRORS if args.strict and errors else EXIT_OK


def _grpo_passthrough(item):
    return item if isinstance(item, dict) else _grpo_one(item)


# -- serve -------------------------------------------------------------------

def cmd_serve(args: argparse.Namespace, settings: Settings) -> int:
    import uvicorn

    from patchcue.service import create_app

    host, port = settings.host_port
    try:
        sock = socket.create_server((host, port), reuse_port=False)
    except OSError as exc:
        print(f"cannot bind {host}:{port}: {exc}", file=sys.stderr)
        return EXIT_RECORD_ERRORS
    server = uvicorn.Server(uvicorn.Config(create_app(settings), log_level="info"))
    # uvicorn drains in-flight requests on SIGINT/SIGTERM before returning.
    server.run(sockets=[sock])
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchcue", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, io: bool = True) -> None:
        if io:
            p.add_argument("--input", required=True)
            p.add_argument("--out", required=True)
            p.add_argument("--strict", action="store_true",
                           help="exit 1 when any record carries an error")
        p.add_argument("--parallelism", type=int)
        p.add_argument("--patch-size", type=int)

    p = sub.add_parser("score", help="score reasoning traces against ground truth")
    common(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("convert", help="convert boxes between pixel and patch coordinates")
    common(p)
    p.add_argument("--mode", choices=["pixel2patch", "patch2pixel"], required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("filter", help="difficulty or grounding-consensus filtering")
    common(p)
    p.add_argument("--mode", choices=["sft", "rl", "consensus"], required=True)
    p.add_argument("--rejected")
    p.add_argument("--iou-threshold", type=float)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("stats", help="cue count and cue area histograms")
    common(p)
    p.add_argument("--emit-plot-data", action="store_true",
                   help="also write a CSV next to --out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("grpo", help="group advantages and objective values")
    common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--std-floor", type=float)
    p.set_defaults(func=cmd_grpo)

    p = sub.add_parser("serve", help="run the HTTP reward service")
    common(p, io=False)
    p.add_argument("--bind")
    p.add_argument("--tau", type=float)
    p.add_argument("--max-batch", type=int)
    p.add_argument("--iou-threshold", type=float)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {
        key: getattr(args, key, None)
        for key in ("tau", "patch_size", "iou_threshold", "epsilon", "beta", "std_floor",
                    "max_batch", "parallelism", "bind")
    }
    try:
        settings = Settings.resolve(**overrides)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return args.func(args, settings)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
