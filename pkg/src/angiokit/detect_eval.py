"""Detection scoring: overlap mAP suite, MLD-containment metrics, and CTP
reclassification.

Matching is greedy in descending confidence, one ground truth per
detection, mirroring standard detector evaluators. Average precision uses
101-point interpolation over the confidence-ranked precision/recall curve,
and mAP@0.50-0.95 averages the ten IoU thresholds 0.50, 0.55, ..., 0.95.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    MissingMldPointError,
    UndefinedMetricError,
    UnknownImageIdError,
    ZeroGroundTruthError,
)
from .geometry import (
    DatasetManifest,
    Detection,
    LesionAnnotation,
    bbox_contains,
    bbox_iou,
)

IOU_GRID = tuple((50 + 5 * i) / 100.0 for i in range(10))
RECALL_GRID = tuple(i / 100.0 for i in range(101))


@dataclass(frozen=True)
class MatchOutcome:
    """Result of matching one image's detections against its ground truths."""

    tp: int
    fp: int
    fn: int
    matches: tuple[tuple[Detection, LesionAnnotation, float], ...]
    fp_detections: tuple[Detection, ...]
    fn_annotations: tuple[LesionAnnotation, ...]

    def __post_init__(self):
        object.__setattr__(self, "matches", tuple(self.matches))
        object.__setattr__(self, "fp_detections", tuple(self.fp_detections))
        object.__setattr__(self, "fn_annotations", tuple(self.fn_annotations))
        if self.tp != len(self.matches) or self.fp != len(self.fp_detections):
            raise ValueError("counts must agree with the classified lists")
        if self.fn != len(self.fn_annotations):
            raise ValueError("fn must agree with the unmatched annotation list")


@dataclass(frozen=True)
class EvalSummary:
    """Aggregated detection metrics at one aggregation level.

    level is "image" (mean over per-image metrics, sd fields populated) or
    "lesion" (totals over all instances). Metrics without support (e.g.
    precision with zero detections) are None.
    """

    precision: float | None
    recall: float | None
    map50: float | None
    map5095: float | None
    level: str
    precision_sd: float | None = None
    recall_sd: float | None = None
    map50_sd: float | None = None
    map5095_sd: float | None = None

    def __post_init__(self):
        for name in ("precision", "recall", "map50", "map5095"):
            v = getattr(self, name)
            if v is not None and not -1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.map50 is not None and self.map5095 is not None:
            if self.map5095 > self.map50 + 1e-12:
                raise ValueError("map5095 cannot exceed map50")


@dataclass(frozen=True)
class MldEvalResult:
    """MLD-containment precision/recall/F1 under one CTP treatment."""

    mld_precision: float
    mld_recall: float
    mld_f1: float
    ctp_count: int
    mode: str  # "ctp_as_fp" | "ctp_as_tp"

    def __post_init__(self):
        if self.mode not in ("ctp_as_fp", "ctp_as_tp"):
            raise ValueError(f"unknown mode {self.mode!r}")
        p, r = self.mld_precision, self.mld_recall
        expected = 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)
        if abs(self.mld_f1 - expected) > 1e-12:
            raise ValueError("f1 must be the harmonic mean of precision and recall")


def _rank_order(dets: Sequence[Detection]) -> list[int]:
    """Indices in descending confidence; input order breaks ties."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))


def _greedy_match(
    dets: Sequence[Detection],
    gts: Sequence[LesionAnnotation],
    iou_thresh: float,
) -> tuple[list[int], list[float]]:
    """Per-detection matched gt index (-1 when unmatched) and its IoU."""
    taken = [False] * len(gts)
    assigned = [-1] * len(dets)
    ious = [0.0] * len(dets)
    for i in _rank_order(dets):
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            iou = bbox_iou(dets[i].bbox, gt.bbox)
            if iou >= iou_thresh and iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            assigned[i] = best_j
            ious[i] = best_iou
    return assigned, ious


def match_at_iou(
    dets: Sequence[Detection],
    gts: Sequence[LesionAnnotation],
    iou_thresh: float,
) -> MatchOutcome:
    """Greedily match one image's detections to ground truths by IoU.

    Detections are visited in descending confidence; each takes the
    unmatched ground truth of highest IoU at or above the threshold (ties
    to the earliest annotation). Leftover detections are FPs, leftover
    ground truths FNs.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError(f"iou threshold must lie in (0, 1), got {iou_thresh}")
    assigned, ious = _greedy_match(dets, gts, iou_thresh)
    matches = tuple(
        (dets[i], gts[assigned[i]], ious[i]) for i in range(len(dets)) if assigned[i] >= 0
    )
    fps = tuple(dets[i] for i in range(len(dets)) if assigned[i] < 0)
    matched_gts = set(assigned)
    fns = tuple(gt for j, gt in enumerate(gts) if j not in matched_gts)
    return MatchOutcome(len(matches), len(fps), len(fns), matches, fps, fns)


def _tp_flags_ranked(
    dets_by_image: dict[str, list[Detection]],
    gts_by_image: dict[str, list[LesionAnnotation]],
    iou_thresh: float,
) -> tuple[list[tuple[float, str, int, bool]], int]:
    """Globally ranked (confidence, image, index, is_tp) rows plus gt total."""
    rows = []
    for image_id in sorted(set(dets_by_image) | set(gts_by_image)):
        dets = dets_by_image.get(image_id, [])
        gts = gts_by_image.get(image_id, [])
        assigned, _ = _greedy_match(dets, gts, iou_thresh)
        for i, det in enumerate(dets):
            rows.append((det.confidence, image_id, i, assigned[i] >= 0))
    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    n_gt = sum(len(g) for g in gts_by_image.values())
    return rows, n_gt


def _ap_from_flags(flags: Sequence[bool], n_gt: int) -> float:
    """101-point interpolated AP from confidence-ranked TP flags."""
    if n_gt == 0:
        raise ZeroGroundTruthError("average precision needs at least one ground truth")
    if not flags:
        return 0.0
    tp_cum = np.cumsum(np.asarray(flags, dtype=np.float64))
    ranks = np.arange(1, len(flags) + 1, dtype=np.float64)
    precision = tp_cum / ranks
    recall = tp_cum / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for r in RECALL_GRID:
        idx = int(np.searchsorted(recall, r, side="left"))
        if idx < len(recall):
            total += envelope[idx]
    return total / len(RECALL_GRID)


def average_precision(
    dets_by_image: dict[str, list[Detection]],
    gts_by_image: dict[str, list[LesionAnnotation]],
    iou_thresh: float,
) -> float:
    """AP at one IoU threshold over all images' matches pooled together."""
    rows, n_gt = _tp_flags_ranked(dets_by_image, gts_by_image, iou_thresh)
    return _ap_from_flags([r[3] for r in rows], n_gt)


def fitness(map50: float, map5095: float) -> float:
    """Detector model-selection fitness: 0.9 * mAP@0.50-0.95 + 0.1 * mAP@0.50."""
    for v in (map50, map5095):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"fitness inputs must lie in [0, 1], got {v}")
    return 0.9 * map5095 + 0.1 * map50


def _mean_sd(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def map_suite(
    dets: Sequence[Detection], manifest: DatasetManifest
) -> tuple[EvalSummary, EvalSummary]:
    """Image-level and lesion-level detection summaries.

    Lesion-level metrics are totals over every instance; image-level
    metrics are means (with population sd) over per-image values, where
    precision and the APs only average over images with at least one
    detection, and recall over images with at least one ground truth.
    AP of an image with detections but no ground truths counts as 0.
    """
    known = manifest.by_id()
    for det in dets:
        if det.image_id not in known:
            raise UnknownImageIdError(f"detection references unknown image {det.image_id!r}")
    gts_by_image = {rec.id: list(rec.lesions) for rec in manifest.images}
    if sum(len(g) for g in gts_by_image.values()) == 0:
        raise ZeroGroundTruthError("manifest has no lesions to evaluate against")
    dets_by_image: dict[str, list[Detection]] = {rec.id: [] for rec in manifest.images}
    for det in dets:
        dets_by_image[det.image_id].append(det)

    # Lesion level: pooled totals.
    tp = fp = fn = 0
    for image_id in sorted(gts_by_image):
        outcome = match_at_iou(dets_by_image[image_id], gts_by_image[image_id], 0.5)
        tp += outcome.tp
        fp += outcome.fp
        fn += outcome.fn
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn)
    map50 = average_precision(dets_by_image, gts_by_image, 0.5)
    map5095 = float(
        np.mean([average_precision(dets_by_image, gts_by_image, t) for t in IOU_GRID])
    )
    lesion = EvalSummary(precision, recall, map50, map5095, level="lesion")

    # Image level: per-image metrics, averaged per the table footnotes.
    precs, recs, ap50s, ap5095s = [], [], [], []
    for image_id in sorted(gts_by_image):
        im_dets = dets_by_image[image_id]
        im_gts = gts_by_image[image_id]
        outcome = match_at_iou(im_dets, im_gts, 0.5)
        if im_gts:
            recs.append(outcome.tp / (outcome.tp + outcome.fn))
        if im_dets:
            precs.append(outcome.tp / (outcome.tp + outcome.fp))
            if im_gts:
                single_d = {image_id: im_dets}
                single_g = {image_id: im_gts}
                ap50s.append(average_precision(single_d, single_g, 0.5))
                ap5095s.append(
                    float(np.mean([average_precision(single_d, single_g, t) for t in IOU_GRID]))
                )
            else:
                ap50s.append(0.0)
                ap5095s.append(0.0)
    p_mean, p_sd = _mean_sd(precs)
    r_mean, r_sd = _mean_sd(recs)
    a50_mean, a50_sd = _mean_sd(ap50s)
    a95_mean, a95_sd = _mean_sd(ap5095s)
    image = EvalSummary(
        p_mean, r_mean, a50_mean, a95_mean, level="image",
        precision_sd=p_sd, recall_sd=r_sd, map50_sd=a50_sd, map5095_sd=a95_sd,
    )
    return image, lesion


def mld_match(
    dets: Sequence[Detection], gts: Sequence[LesionAnnotation]
) -> MatchOutcome:
    """Match detections to ground truths by MLD-point containment.

    A detection is a TP when its box contains the MLD point of a
    still-unmatched ground truth (greedy by confidence, each ground truth
    used once, earliest annotation on ties); otherwise it is an FP. Ground
    truths whose MLD no detection captured are FNs.
    """
    for gt in gts:
        if gt.mld_point is None:
            raise MissingMldPointError("every ground truth needs an mld_point for MLD matching")
    taken = [False] * len(gts)
    matches = []
    fps = []
    for i in _rank_order(dets):
        det = dets[i]
        best_j = -1
        for j, gt in enumerate(gts):
            if not taken[j] and bbox_contains(det.bbox, gt.mld_point):
                best_j = j
                break
        if best_j >= 0:
            taken[best_j] = True
            matches.append((det, gts[best_j], 1.0))
        else:
            fps.append(det)
    fns = tuple(gt for j, gt in enumerate(gts) if not taken[j])
    return MatchOutcome(len(matches), len(fps), len(fns), tuple(matches), tuple(fps), fns)


def mld_metrics_from_counts(
    tp: int, fp: int, fn: int, mode: str = "ctp_as_fp", ctp_count: int = 0
) -> MldEvalResult:
    """MLD precision/recall/F1 from raw counts."""
    if tp + fp == 0:
        raise UndefinedMetricError("MLD-precision undefined: no detections")
    if tp + fn == 0:
        raise UndefinedMetricError("MLD-recall undefined: no ground truths")
    p = tp / (tp + fp)
    r = tp / (tp + fn)
    f1 = 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)
    return MldEvalResult(p, r, f1, ctp_count, mode)


def mld_metrics(outcome: MatchOutcome) -> MldEvalResult:
    """MLD precision/recall/F1 of a containment matching, CTPs kept as FPs."""
    return mld_metrics_from_counts(outcome.tp, outcome.fp, outcome.fn)


def ctp_flags(
    fp_mlds: Sequence[float], gt_mlds: Sequence[float], alpha: float = 0.05
) -> list[bool]:
    """Per-FP candidate-true-positive flags.

    An FP is a CTP when a two-sided Mann-Whitney test of its single MLD
    against the ground-truth MLD distribution does not reject at alpha
    (p > alpha), i.e. the value is statistically consistent with real
    lesion MLDs.
    """
    from .stats import mann_whitney_u  # local import: stats is independent otherwise

    if len(gt_mlds) == 0:
        raise UndefinedMetricError("CTP analysis needs a non-empty ground-truth MLD sample")
    return [mann_whitney_u([v], list(gt_mlds)).p_value > alpha for v in fp_mlds]


def ctp_analysis(
    outcome: MatchOutcome,
    fp_mlds: Sequence[float],
    gt_mlds: Sequence[float],
    alpha: float = 0.05,
) -> tuple[list[bool], MldEvalResult]:
    """Flag candidate true positives and recompute the MLD metrics.

    The returned result moves every CTP from FP to TP. fp_mlds must align
    one-to-one with outcome.fp_detections.
    """
    if len(fp_mlds) != outcome.fp:
        raise ValueError(
            f"need one MLD per FP detection: got {len(fp_mlds)} for {outcome.fp} FPs"
        )
    flags = ctp_flags(fp_mlds, gt_mlds, alpha)
    n_ctp = sum(flags)
    result = mld_metrics_from_counts(
        outcome.tp + n_ctp, outcome.fp - n_ctp, outcome.fn,
        mode="ctp_as_tp", ctp_count=n_ctp,
    )
    return flags, result
