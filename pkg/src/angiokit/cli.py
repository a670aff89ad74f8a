"""Command-line surface: severity, eval-detect, eval-seg, augment, agree.

Exit codes: 0 success, 2 input/schema problem, 3 metrics undefined (zero
denominators; partial output with explicit nulls is still written).
All commands are deterministic: identical inputs, config, and seed produce
byte-identical outputs regardless of --jobs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .augment import AugmentConfig, build_training_stream
from .detect_eval import ctp_flags, map_suite, mld_match, mld_metrics_from_counts
from .errors import (
    AngioError,
    SchemaError,
    UndefinedMetricError,
    ZeroGroundTruthError,
)
from .fileio import (
    dump_json,
    load_detections,
    load_manifest,
    manifest_to_dict,
    read_mask_png,
    write_gray_png,
)
from .geometry import CropContext, DatasetManifest, ImageRecord, uncrop_point
from .seg_eval import cl_dice, mhd, pixel_metrics
from .severity import severity_with_profile
from .stats import bland_altman, severity_agreement

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_UNDEFINED = 3


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("ANGIO_JOBS", "1")))
    except ValueError:
        return 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_run_report(args, command: str, inputs: list, outputs: list, started: float) -> None:
    if not getattr(args, "run_report", None):
        return
    report = {
        "command": command,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "config_digest": hashlib.sha256(
            json.dumps(vars(args), sort_keys=True, default=str).encode()
        ).hexdigest(),
        "outputs": [str(p) for p in outputs],
        "wall_time_s": time.perf_counter() - started,
    }
    dump_json(report, args.run_report)


def _fmt(value: float) -> str:
    return f"{value:.9g}"


# ---------------------------------------------------------------------------
# severity
# ---------------------------------------------------------------------------

def cmd_severity(args) -> int:
    started = time.perf_counter()
    mask = read_mask_png(args.mask)
    ctx = CropContext.identity()
    if args.crop_context:
        raw = json.loads(Path(args.crop_context).read_text())
        try:
            ctx = CropContext(
                float(raw["x_offset"]), float(raw["y_offset"]),
                float(raw["x_scale"]), float(raw["y_scale"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad crop context: {exc}") from exc
    report, profile = severity_with_profile(mask)
    point = uncrop_point(report.mld_point, ctx)
    dump_json(
        {
            "mld_px": report.mld_px,
            "mad_px": report.mad_px,
            "ds_percent": report.ds_percent,
            "mld_point": [point.x, point.y],
            "peak_indices": list(report.peak_indices),
        },
        args.out,
    )
    outputs = [args.out]
    if args.profile_csv:
        Path(args.profile_csv).parent.mkdir(parents=True, exist_ok=True)
        with open(args.profile_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "x", "y", "radius"])
            for i, ((x, y), r) in enumerate(zip(profile.points, profile.radii)):
                writer.writerow([i, x, y, _fmt(r)])
        outputs.append(args.profile_csv)
    _write_run_report(args, "severity", [args.mask], outputs, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval-detect
# ---------------------------------------------------------------------------

def _summary_dict(summary) -> dict:
    out = {
        "precision": summary.precision,
        "recall": summary.recall,
        "map50": summary.map50,
        "map50_95": summary.map5095,
    }
    if summary.level == "image":
        out.update({
            "precision_sd": summary.precision_sd,
            "recall_sd": summary.recall_sd,
            "map50_sd": summary.map50_sd,
            "map50_95_sd": summary.map5095_sd,
        })
    return out


def cmd_eval_detect(args) -> int:
    started = time.perf_counter()
    manifest = load_manifest(args.manifest)
    dets = load_detections(args.detections)
    code = EXIT_OK

    if args.mode == "overlap":
        image, lesion = map_suite(dets, manifest)
        payload = {"image_level": _summary_dict(image), "lesion_level": _summary_dict(lesion)}
        core = [image.precision, image.recall, image.map50, image.map5095,
                lesion.precision, lesion.recall, lesion.map50, lesion.map5095]
        if any(v is None for v in core):
            code = EXIT_UNDEFINED
    else:
        by_image: dict[str, list] = {rec.id: [] for rec in manifest.images}
        det_index: dict[int, int] = {}
        for i, det in enumerate(dets):
            if det.image_id not in by_image:
                raise SchemaError(f"detection references unknown image {det.image_id!r}")
            by_image[det.image_id].append(det)
            det_index[id(det)] = i
        tp = fp = fn = 0
        fp_order: list[int] = []
        for rec in manifest.images:
            outcome = mld_match(by_image[rec.id], rec.lesions)
            tp += outcome.tp
            fp += outcome.fp
            fn += outcome.fn
            fp_order.extend(det_index[id(d)] for d in outcome.fp_detections)
        payload = {"tp": tp, "fp": fp, "fn": fn}
        try:
            base = mld_metrics_from_counts(tp, fp, fn)
            payload["treating_ctps_as_fps"] = {
                "mld_precision": base.mld_precision,
                "mld_recall": base.mld_recall,
                "mld_f1": base.mld_f1,
            }
        except UndefinedMetricError:
            payload["treating_ctps_as_fps"] = {
                "mld_precision": None, "mld_recall": None, "mld_f1": None,
            }
            code = EXIT_UNDEFINED
        if args.ctp or args.ctp_as_tp:
            if not args.det_mlds:
                raise SchemaError("--ctp needs --det-mlds (one MLD per detection)")
            det_mlds = json.loads(Path(args.det_mlds).read_text())
            if not isinstance(det_mlds, list) or len(det_mlds) != len(dets):
                raise SchemaError(
                    f"--det-mlds must list one number per detection ({len(dets)} expected)"
                )
            gt_mlds = [
                lesion.mld_px for rec in manifest.images
                for lesion in rec.lesions if lesion.mld_px is not None
            ]
            if not gt_mlds:
                raise SchemaError("manifest carries no ground-truth mld_px values")
            flags = ctp_flags([float(det_mlds[i]) for i in fp_order], gt_mlds, args.alpha)
            n_ctp = sum(flags)
            payload["ctp"] = {
                "count": n_ctp,
                "fp_detection_indices": fp_order,
                "flags": flags,
            }
            if args.ctp_as_tp:
                try:
                    re = mld_metrics_from_counts(
                        tp + n_ctp, fp - n_ctp, fn, mode="ctp_as_tp", ctp_count=n_ctp
                    )
                    payload["treating_ctps_as_tps"] = {
                        "mld_precision": re.mld_precision,
                        "mld_recall": re.mld_recall,
                        "mld_f1": re.mld_f1,
                    }
                except UndefinedMetricError:
                    payload["treating_ctps_as_tps"] = {
                        "mld_precision": None, "mld_recall": None, "mld_f1": None,
                    }
                    code = EXIT_UNDEFINED

    dump_json(payload, args.out)
    _write_run_report(args, "eval-detect", [args.manifest, args.detections], [args.out], started)
    return code


# ---------------------------------------------------------------------------
# eval-seg
# ---------------------------------------------------------------------------

def _seg_row(name: str, gt_dir: Path, pred_dir: Path) -> list:
    gt = read_mask_png(gt_dir / name)
    pred = read_mask_png(pred_dir / name)
    acc, prec, rec, dice, iou = pixel_metrics(pred, gt)
    cld = cl_dice(pred, gt)
    try:
        dist = mhd(pred, gt)
    except AngioError:
        dist = None  # a mask was empty; leave the cell blank
    return [name, acc, prec, rec, dice, iou, cld, dist]


def cmd_eval_seg(args) -> int:
    started = time.perf_counter()
    gt_dir = Path(args.gt_dir)
    pred_dir = Path(args.pred_dir)
    gt_names = sorted(p.name for p in gt_dir.glob("*.png"))
    pred_names = sorted(p.name for p in pred_dir.glob("*.png"))
    if gt_names != pred_names:
        odd = sorted(set(gt_names).symmetric_difference(pred_names))
        raise SchemaError(f"unpaired mask files: {', '.join(odd)}")
    if not gt_names:
        raise SchemaError("no .png pairs found")

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = list(pool.map(lambda n: _seg_row(n, gt_dir, pred_dir), gt_names))

    header = ["name", "acc", "prec", "rec", "dice", "iou", "cldice", "mhd"]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0]] + [_fmt(v) if v is not None else "" for v in row[1:]])
        for stat_name, reducer in (("mean", _col_mean), ("sd", _col_sd)):
            writer.writerow(
                [stat_name]
                + [
                    _fmt(reducer([row[k] for row in rows if row[k] is not None]))
                    for k in range(1, len(header))
                ]
            )
    _write_run_report(args, "eval-seg", [], [args.out], started)
    return EXIT_OK


def _col_mean(vals: list[float]) -> float:
    return sum(vals) / len(vals)


def _col_sd(vals: list[float]) -> float:
    mu = _col_mean(vals)
    return (sum((v - mu) ** 2 for v in vals) / len(vals)) ** 0.5


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_-]+", "-", text)[:64]


def cmd_augment(args) -> int:
    started = time.perf_counter()
    manifest = load_manifest(args.manifest)
    cfg = AugmentConfig()
    if args.config:
        try:
            cfg = AugmentConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (TypeError, ValueError, KeyError) as exc:
            raise SchemaError(f"bad augment config: {exc}") from exc
    if args.seed is not None:
        cfg = AugmentConfig(cfg.static, cfg.dynamic, cfg.composite, args.seed)
    tiers = [t.strip() for t in args.tiers.split(",") if t.strip()]

    stream = build_training_stream(manifest, cfg, tiers, final_epochs=args.final_epochs)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for k, sample in enumerate(stream):
        prov = sample.provenance
        names.append(
            f"{k:05d}__{_safe_name(prov.source_id)}__{_safe_name('-'.join(prov.transforms))}.png"
        )

    def write_one(k: int) -> None:
        write_gray_png(stream[k].image, out_dir / names[k])

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        list(pool.map(write_one, range(len(stream))))

    records = []
    extras = {}
    for k, sample in enumerate(stream):
        rec_id = Path(names[k]).stem
        records.append(
            ImageRecord(
                rec_id, names[k], sample.image.width, sample.image.height, sample.annotations
            )
        )
        prov = sample.provenance
        extras[rec_id] = {
            "provenance": {
                "source_id": prov.source_id,
                "tiers": list(prov.tiers),
                "transforms": list(prov.transforms),
                "seed": prov.seed,
            }
        }
    out_manifest = out_dir / "manifest.json"
    dump_json(manifest_to_dict(DatasetManifest(tuple(records)), extras), out_manifest)
    _write_run_report(
        args, "augment", [args.manifest], [str(out_manifest)] + names, started
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# agree
# ---------------------------------------------------------------------------

def _load_pairs(path: str) -> tuple[list[float], list[float]]:
    preds, gts = [], []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 2:
                raise SchemaError(f"{path}:{i + 1}: need two columns (pred_mld, gt_mld)")
            try:
                preds.append(float(row[0]))
                gts.append(float(row[1]))
            except ValueError as exc:
                if i == 0:  # tolerate a header row
                    continue
                raise SchemaError(f"{path}:{i + 1}: non-numeric value") from exc
    if len(preds) < 2:
        raise SchemaError("need at least 2 data rows")
    return preds, gts


def cmd_agree(args) -> int:
    started = time.perf_counter()
    preds, gts = _load_pairs(args.pairs)
    ba = bland_altman(preds, gts)
    code = EXIT_OK
    payload = {
        "mad": ba.mad,
        "sd": ba.sd,
        "mean_diff": ba.mean_diff,
        "loa_low": ba.loa_low,
        "loa_high": ba.loa_high,
        "gt_threshold": args.gt_thresh,
        "pred_threshold": args.pred_thresh,
    }
    try:
        report = severity_agreement(
            preds, gts, args.gt_thresh, args.pred_thresh,
            iters=args.bootstrap_iters, seed=args.seed,
        )
        payload.update({
            "prec": report.prec, "prec_ci": list(report.prec_ci),
            "rec": report.rec, "rec_ci": list(report.rec_ci),
            "f1": report.f1, "f1_ci": list(report.f1_ci),
            "bal_acc": report.bal_acc, "bal_acc_ci": list(report.bal_acc_ci),
        })
    except UndefinedMetricError:
        payload.update({
            "prec": None, "prec_ci": None, "rec": None, "rec_ci": None,
            "f1": None, "f1_ci": None, "bal_acc": None, "bal_acc_ci": None,
        })
        code = EXIT_UNDEFINED
    dump_json(payload, args.out)
    points_csv = args.points_csv or str(Path(args.out).with_suffix(".points.csv"))
    with open(points_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mean", "diff"])
        for mean, diff in ba.points:
            writer.writerow([_fmt(mean), _fmt(diff)])
    _write_run_report(args, "agree", [args.pairs], [args.out, points_csv], started)
    return code


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="angio",
        description="Mask-based lesion severity estimation, augmentation, and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("severity", help="estimate MLD/MAD/DS from a lesion mask PNG")
    p.add_argument("mask", help="8-bit grayscale mask PNG (foreground >= 128)")
    p.add_argument("--out", required=True, help="severity report JSON")
    p.add_argument("--crop-context", help="JSON with x_offset/y_offset/x_scale/y_scale")
    p.add_argument("--profile-csv", help="write the radius profile as CSV")
    p.add_argument("--run-report", help="write a run report JSON")
    p.set_defaults(func=cmd_severity)

    p = sub.add_parser("eval-detect", help="score detections against a manifest")
    p.add_argument("manifest", help="ground-truth manifest JSON")
    p.add_argument("detections", help="predicted detections JSON")
    p.add_argument("--mode", choices=("overlap", "mld"), default="overlap")
    p.add_argument("--out", required=True, help="metrics JSON")
    p.add_argument("--ctp", action="store_true", help="run the candidate-TP analysis")
    p.add_argument("--ctp-as-tp", action="store_true",
                   help="also emit metrics with CTPs reclassified as TPs (implies --ctp)")
    p.add_argument("--det-mlds", help="JSON array: one estimated MLD per detection")
    p.add_argument("--alpha", type=float, default=0.05, help="CTP significance level")
    p.add_argument("--run-report", help="write a run report JSON")
    p.set_defaults(func=cmd_eval_detect)

    p = sub.add_parser("eval-seg", help="score paired mask directories")
    p.add_argument("gt_dir", help="ground-truth mask PNG directory")
    p.add_argument("pred_dir", help="predicted mask PNG directory")
    p.add_argument("--out", required=True, help="per-pair CSV with mean/sd summary rows")
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--run-report", help="write a run report JSON")
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("augment", help="materialize the augmentation stream")
    p.add_argument("manifest", help="source manifest JSON")
    p.add_argument("--config", help="AugmentConfig JSON (defaults when omitted)")
    p.add_argument("--tiers", default="static",
                   help="comma-separated tiers: static,dynamic,composite")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out-dir", required=True, help="output directory for PNGs + manifest")
    p.add_argument("--final-epochs", action="store_true",
                   help="drop composite samples (mosaic off near the end of training)")
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--run-report", help="write a run report JSON")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("agree", help="severity agreement from a pred/gt MLD CSV")
    p.add_argument("pairs", help="two-column CSV: pred_mld, gt_mld")
    p.add_argument("--gt-thresh", type=float, default=4.0)
    p.add_argument("--pred-thresh", type=float, default=6.0)
    p.add_argument("--bootstrap-iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="agreement report JSON")
    p.add_argument("--points-csv", help="Bland-Altman points CSV (default: <out>.points.csv)")
    p.add_argument("--run-report", help="write a run report JSON")
    p.set_defaults(func=cmd_agree)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ZeroGroundTruthError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except (AngioError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
