"""Command-line entry points.

Exit codes: 0 success, 2 usage/config/input error, 3 artifact/content error.
Every command prints its fully resolved configuration as JSON first.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .augment import AugmentConfig, cut_range, cutflip, sample_rng
from .metrics import METRIC_NAMES
from .models import CheckpointError, load_estimator
from .train import (ABLATION_ROWS, ConfigError, NonFiniteLossError, TrainConfig, evaluate_samples,
                    ablation_config, fit)
from .types import DepthRange

log = logging.getLogger("crossdepth")

FLAG_NAMES = ("cd", "up", "cu", "cf")


class UsageError(Exception):
    exit_code = 2


class ArtifactError(Exception):
    exit_code = 3


def _echo(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, "resolved": resolved}, indent=2, default=str), flush=True)


def _parse_size(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)[xX](\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _ensure_writable(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {path} is not writable: {exc}") from exc
    return path


def _require_data(root: Path) -> dict:
    if not root.is_dir():
        raise UsageError(f"data directory {root} does not exist")
    try:
        return data_mod.read_manifest(root)
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        raise UsageError(str(exc)) from exc


def _load_split(root: Path, split: str, manifest: dict):
    if split not in manifest["splits"]:
        raise UsageError(f"split {split!r} not in {root}/manifest.json")
    try:
        return data_mod.load_split(root, split)
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"cannot read split {split!r}: {exc}") from exc


def _load_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    return TrainConfig.from_dict(raw)


# ---------------------------------------------------------------------------


def cmd_synth_data(args) -> list[Path]:
    counts = {"train": args.train, "val": args.val}
    if args.test:
        counts["test"] = args.test
    for split, n in counts.items():
        if n <= 0:
            raise UsageError(f"empty split {split!r}")
    resolved = {"out": args.out, "counts": counts, "size": list(args.size), "seed": args.seed,
                "depth_range": [args.d_min, args.d_max], "invalid_fraction": args.invalid_fraction}
    _echo("synth-data", resolved)
    out = _ensure_writable(Path(args.out))
    data_mod.synthesize_dataset(out, counts, size=args.size, seed=args.seed,
                                depth_range=DepthRange(args.d_min, args.d_max),
                                invalid_fraction=args.invalid_fraction)
    return [out / "manifest.json"]


def cmd_train(args) -> list[Path]:
    cfg = _load_config(args.config)
    root = Path(args.data)
    manifest = _require_data(root)
    resolved = cfg.to_dict()
    _echo("train", resolved)
    out = _ensure_writable(Path(args.out))
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=2) + "\n")
    train = _load_split(root, "train", manifest)
    val = _load_split(root, "val", manifest) if "val" in manifest["splits"] else None
    best = fit(train, cfg, out, val=val, resume=args.resume)
    return [best, out / "last.ckpt", out / "train_log.jsonl"]


def _write_reports(report_path: Path, report, per_image, ids) -> list[Path]:
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    csv_path = report_path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", *METRIC_NAMES, "pixel_count"])
        for sid, r in zip(ids, per_image):
            writer.writerow([sid, *(repr(getattr(r, k)) for k in METRIC_NAMES), r.pixel_count])
    return [report_path, csv_path]


def cmd_eval(args) -> list[Path]:
    root = Path(args.data)
    manifest = _require_data(root)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise ArtifactError(f"checkpoint {ckpt} not found")
    try:
        estimator = load_estimator(ckpt)
    except CheckpointError as exc:
        raise ArtifactError(str(exc)) from exc
    depth_range = estimator.cfg.depth_range
    _echo("eval", {"checkpoint": str(ckpt), "data": str(root), "split": args.split,
                   "report": args.report, "pixel_weighted": args.pixel_weighted,
                   "depth_range": [depth_range.d_min, depth_range.d_max]})
    samples = _load_split(root, args.split, manifest)
    report, per_image = evaluate_samples(estimator, samples, depth_range, args.pixel_weighted)
    print(json.dumps(report.as_dict(), indent=2))
    return _write_reports(Path(args.report), report, per_image, [s.id for s in samples])


def parse_grid(text: str) -> list[tuple[str, tuple[bool, bool, bool, bool]]]:
    """Turn ``--grid`` into named flag rows (cd, up, cu, cf).

    Accepted forms: row ids (``"1,2,7"``); explicit combinations joined by
    ``+`` (``"cd+up,none"``); or bare flag names (``"cd,up,cu,cf"``),
    which expand to every valid combination of those flags.
    """
    entries = [e.strip().lower() for e in text.split(",") if e.strip()]
    if not entries:
        raise UsageError("empty --grid")
    if all(e in FLAG_NAMES for e in entries):
        varied = [f for f in FLAG_NAMES if f in entries]
        if "up" in varied and "cd" not in varied:
            raise UsageError("invalid grid: varying up requires varying cd")
        rows = []
        for bits in range(2 ** len(varied)):
            on = {f for i, f in enumerate(varied) if bits >> i & 1}
            flags = tuple(f in on for f in FLAG_NAMES)
            if flags[1] and not flags[0]:
                continue
            rows.append(("+".join(f for f in FLAG_NAMES if f in on) or "none", flags))
        return rows
    rows = []
    for e in entries:
        if e.isdigit():
            rid = int(e)
            if rid not in ABLATION_ROWS:
                raise UsageError(f"unknown ablation row {rid} (known: {sorted(ABLATION_ROWS)})")
            rows.append((f"id{rid}", ABLATION_ROWS[rid]))
            continue
        parts = [] if e == "none" else e.split("+")
        bad = [p for p in parts if p not in FLAG_NAMES]
        if bad:
            raise UsageError(f"unknown ablation flag(s) {bad} in {e!r}")
        flags = tuple(f in parts for f in FLAG_NAMES)
        if flags[1] and not flags[0]:
            raise UsageError(f"invalid combination {e!r}: up requires cd")
        rows.append((e, flags))
    return rows


def cmd_ablate(args) -> list[Path]:
    base = _load_config(args.config)
    if args.seed is not None:
        base = replace(base, seed=args.seed)
    if args.max_steps is not None:
        base = replace(base, max_steps=args.max_steps)
    rows = parse_grid(args.grid)
    root = Path(args.data)
    manifest = _require_data(root)
    _echo("ablate", {"base": base.to_dict(), "rows": [name for name, _ in rows]})
    out = _ensure_writable(Path(args.out))
    train = _load_split(root, "train", manifest)
    val_split = "val" if "val" in manifest["splits"] else "train"
    val = _load_split(root, val_split, manifest)
    table = out / "ablation.csv"
    header = ["row", "cd", "up", "cu", "cf", *METRIC_NAMES]
    written = [table]
    with open(table, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for name, flags in rows:
            cfg = ablation_config(base, *flags)
            run_dir = out / name
            best = fit(train, cfg, run_dir, val=val)
            estimator = load_estimator(best)
            report, _ = evaluate_samples(estimator, val, cfg.depth_range, cfg.pixel_weighted)
            writer.writerow([name, *(int(b) for b in flags),
                             *(repr(getattr(report, k)) for k in METRIC_NAMES)])
            f.flush()
            written.append(best)
            log.info("ablation row %s: abs_rel %.4f rmse %.4f", name, report.abs_rel, report.rmse)
    return written


def cmd_augment_preview(args) -> list[Path]:
    root = Path(args.data)
    manifest = _require_data(root)
    cfg = AugmentConfig(seed=args.seed)
    _echo("augment-preview", {"data": str(root), "out": args.out, "n": args.n, "seed": args.seed,
                              "split": args.split, "cutflip_prob": cfg.cutflip_prob})
    out = _ensure_writable(Path(args.out))
    samples = _load_split(root, args.split, manifest)
    order = np.random.default_rng(args.seed).permutation(len(samples))[:args.n]
    records, written = [], []
    for idx in order:
        s = samples[int(idx)]
        image, depth, applied, cut = cutflip(s.image, s.gt_depth, sample_rng(args.seed, s.id),
                                             cfg.cutflip_prob)
        h = s.image.shape[1]
        lo_hi = cut_range(h)
        for tag, img, dep in (("before", s.image, s.gt_depth), ("after", image, depth)):
            data_mod.write_ppm(out / f"{s.id}_{tag}.ppm", img)
            data_mod.write_pfm(out / f"{s.id}_{tag}.pfm", dep)
            written += [out / f"{s.id}_{tag}.ppm", out / f"{s.id}_{tag}.pfm"]
        records.append({"id": s.id, "applied": applied, "cut_row": cut, "height": h,
                        "cut_range": list(lo_hi) if lo_hi else None})
    sidecar = out / "cutflip.json"
    sidecar.write_text(json.dumps({"seed": args.seed, "samples": records}, indent=2) + "\n")
    return written + [sidecar]


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossdepth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic image/depth dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=64)
    p.add_argument("--val", type=int, default=16)
    p.add_argument("--test", type=int, default=0)
    p.add_argument("--size", type=_parse_size, default=(96, 128), help="HxW")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-min", type=float, default=0.5)
    p.add_argument("--d-max", type=float, default=10.0)
    p.add_argument("--invalid-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train both branches")
    p.add_argument("--config", help="JSON config; omitted keys take defaults")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint with training state to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="transformer-only evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--report", required=True, help="JSON path; per-image CSV goes next to it")
    p.add_argument("--pixel-weighted", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare ablation rows")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", required=True,
                   help='row ids "1,2,7", combos "cd+up,none", or flags "cd,up,cu,cf"')
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("augment-preview", help="write before/after CutFlip pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_augment_preview)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        written = args.func(args)
    except (UsageError, ConfigError) as exc:
        key = getattr(exc, "key", None)
        print(f"error: {exc}" + (f" (key: {key})" if key else ""), file=sys.stderr)
        return 2
    except (ArtifactError, CheckpointError, NonFiniteLossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"exit_code": 0, "artifacts_written": [str(p) for p in written if p]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
