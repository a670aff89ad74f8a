"""Segmentation scoring: pixel overlap metrics, clDice, and MHD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError, EmptyMaskError
from .geometry import BinaryMask
from .morphology import skeletonize


@dataclass(frozen=True)
class SegScore:
    """One mask pair's scores; mhd is in pixels, everything else in [0, 1]."""

    acc: float
    prec: float
    rec: float
    dice: float
    iou: float
    cldice: float
    mhd: float

    def __post_init__(self):
        for name in ("acc", "prec", "rec", "dice", "iou", "cldice"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.mhd < 0:
            raise ValueError(f"mhd must be non-negative, got {self.mhd}")
        if abs(self.dice - 2.0 * self.iou / (1.0 + self.iou)) > 1e-9:
            raise ValueError("dice and iou are inconsistent")


def _check_dims(pred: BinaryMask, gt: BinaryMask) -> None:
    if pred.data.shape != gt.data.shape:
        raise DimensionMismatchError(
            f"mask shapes differ: {pred.data.shape} vs {gt.data.shape}"
        )


def pixel_metrics(pred: BinaryMask, gt: BinaryMask) -> tuple[float, float, float, float, float]:
    """Confusion-matrix ratios (acc, prec, rec, dice, iou) over pixels.

    Ratios with an empty denominator are 1.0 when both masks are empty and
    0.0 otherwise.
    """
    _check_dims(pred, gt)
    p = pred.data
    g = gt.data
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    tn = p.size - tp - fp - fn
    both_empty = not p.any() and not g.any()

    def ratio(num: int, den: int) -> float:
        if den == 0:
            return 1.0 if both_empty else 0.0
        return num / den

    acc = (tp + tn) / p.size
    prec = ratio(tp, tp + fp)
    rec = ratio(tp, tp + fn)
    dice = ratio(2 * tp, 2 * tp + fp + fn)
    iou = ratio(tp, tp + fp + fn)
    return acc, prec, rec, dice, iou


def cl_dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """Centerline Dice: harmonic mean of skeleton-in-mask containment ratios.

    Topology precision checks the prediction's skeleton against the ground
    truth mask; topology sensitivity checks the ground truth's skeleton
    against the prediction. 1.0 when both masks are empty, 0.0 when exactly
    one is.
    """
    _check_dims(pred, gt)
    p = pred.data
    g = gt.data
    if not p.any() and not g.any():
        return 1.0
    if not p.any() or not g.any():
        return 0.0
    sp = skeletonize(pred).data
    sg = skeletonize(gt).data
    tprec = (sp & g).sum() / sp.sum()
    tsens = (sg & p).sum() / sg.sum()
    if tprec + tsens == 0.0:
        return 0.0
    return float(2.0 * tprec * tsens / (tprec + tsens))


def _directed_mean_distance(src: np.ndarray, dst: np.ndarray) -> float:
    """Mean over src foreground of Euclidean distance to nearest dst pixel."""
    dist_to_dst = ndimage.distance_transform_edt(~dst)
    return float(dist_to_dst[src].mean())


def mhd(pred: BinaryMask, gt: BinaryMask) -> float:
    """Modified Hausdorff distance: the larger of the two directed mean
    nearest-point distances between the foregrounds, in pixels."""
    _check_dims(pred, gt)
    p = pred.data
    g = gt.data
    if not p.any() or not g.any():
        raise EmptyMaskError("MHD is undefined for empty masks")
    return max(_directed_mean_distance(p, g), _directed_mean_distance(g, p))


def score_pair(pred: BinaryMask, gt: BinaryMask) -> SegScore:
    """All segmentation metrics for one prediction / ground-truth pair."""
    acc, prec, rec, dice, iou = pixel_metrics(pred, gt)
    return SegScore(acc, prec, rec, dice, iou, cl_dice(pred, gt), mhd(pred, gt))
