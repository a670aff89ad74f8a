"""Statistical machinery: Mann-Whitney U, bootstrap CIs, Bland-Altman
agreement, and thresholded severity agreement."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EmptySampleError, LengthMismatchError, UndefinedMetricError

# Largest subset count for which the exact p-value enumerates every
# x/y assignment of the pooled sample (handles ties exactly).
_ENUM_LIMIT = 250_000
# Tie-free exact distribution is used up to this many pairs.
_EXACT_PAIR_LIMIT = 10_000


@dataclass(frozen=True)
class MannWhitneyResult:
    """U statistic (ties contribute 0.5 unless strict) and two-sided p."""

    u: float
    p_value: float
    n: int
    m: int

    def __post_init__(self):
        if not 0.0 <= self.u <= self.n * self.m:
            raise ValueError(f"U must lie in [0, n*m], got {self.u}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value must lie in [0, 1], got {self.p_value}")


@dataclass(frozen=True)
class BlandAltman:
    """Paired-difference agreement statistics (pred - gt), pixel units."""

    mean_diff: float
    sd: float
    loa_low: float
    loa_high: float
    mad: float
    points: tuple[tuple[float, float], ...]  # (pair mean, pair diff) per lesion


@dataclass(frozen=True)
class AgreementReport:
    """Severity agreement: difference statistics plus thresholded
    classification metrics with bootstrap confidence intervals."""

    mad: float
    sd: float
    mean_diff: float
    loa_low: float
    loa_high: float
    prec: float
    rec: float
    f1: float
    bal_acc: float
    prec_ci: tuple[float, float]
    rec_ci: tuple[float, float]
    f1_ci: tuple[float, float]
    bal_acc_ci: tuple[float, float]

    def __post_init__(self):
        if not self.loa_low <= self.mean_diff <= self.loa_high:
            raise ValueError("limits of agreement must bracket the mean difference")
        for name in ("prec_ci", "rec_ci", "f1_ci", "bal_acc_ci"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} bounds are inverted")


def _pair_score(a: float, b: float, ties: str) -> float:
    if a < b:
        return 1.0
    if a == b and ties == "half":
        return 0.5
    return 0.0


def _u_statistic(x: np.ndarray, y: np.ndarray, ties: str) -> float:
    """U = sum over pairs of bool(x_i < y_j), ties worth 0.5 in half mode."""
    ys = np.sort(y)
    below = np.searchsorted(ys, x, side="left")  # y < x_i
    upto = np.searchsorted(ys, x, side="right")  # y <= x_i
    greater = (len(ys) - upto).sum()
    if ties == "half":
        return float(greater + 0.5 * (upto - below).sum())
    return float(greater)


def _exact_p_enumerated(pooled: np.ndarray, n: int, u_obs: float, ties: str) -> float:
    """Two-sided p by enumerating every split of the pooled sample.

    Counts splits whose U lies at least as far from n*m/2 as the observed
    one. Exact under ties; cost is comb(n+m, n) statistic evaluations.
    """
    total = len(pooled)
    center = n * (total - n) / 2.0
    dev = abs(u_obs - center) - 1e-12
    hits = 0
    count = 0
    for combo in itertools.combinations(range(total), n):
        mask = np.zeros(total, dtype=bool)
        mask[list(combo)] = True
        u = _u_statistic(pooled[mask], pooled[~mask], ties)
        count += 1
        if abs(u - center) >= dev:
            hits += 1
    return hits / count


def _exact_p_singleton(pooled: np.ndarray, n: int, u_obs: float, ties: str) -> float:
    """Exact two-sided p when one sample is a singleton.

    Every pooled split assigns exactly one element to the singleton side,
    so the full enumeration collapses to one U evaluation per element.
    """
    total = len(pooled)
    srt = np.sort(pooled)
    below = np.searchsorted(srt, pooled, side="left")
    upto = np.searchsorted(srt, pooled, side="right")
    greater = total - upto
    equal_rest = upto - below - 1
    if ties == "half":
        u_single = greater + 0.5 * equal_rest  # value as x against the rest
    else:
        u_single = greater.astype(np.float64)
    if n == 1:
        us = u_single
    else:  # m == 1: the singleton is the y side
        us = below + (0.5 * equal_rest if ties == "half" else 0.0)
    center = (total - 1) / 2.0
    dev = abs(u_obs - center) - 1e-12
    return float((np.abs(us - center) >= dev).sum() / total)


def _exact_p_distribution(n: int, m: int, u_obs: float) -> float:
    """Two-sided p from the tie-free exact U distribution.

    Builds the arrangement counts with the standard recurrence: the largest
    pooled value is either an x (adds 0 to U) or a y (adds n). Counts are
    float64; fine for p-value purposes.
    """
    width = n * m + 1
    # table[j] holds counts over u for (i, j) as i advances
    table = [np.zeros(width) for _ in range(m + 1)]
    for j in range(m + 1):
        table[j][0] = 1.0
    for i in range(1, n + 1):
        new = [np.zeros(width) for _ in range(m + 1)]
        new[0][0] = 1.0
        for j in range(1, m + 1):
            shifted = np.zeros(width)
            shifted[i:] = new[j - 1][: width - i]
            new[j] = table[j] + shifted
        table = new
    counts = table[m]
    center = n * m / 2.0
    dev = abs(u_obs - center) - 1e-12
    us = np.arange(width, dtype=np.float64)
    p = counts[np.abs(us - center) >= dev].sum() / counts.sum()
    return min(1.0, float(p))


def _approx_p(x: np.ndarray, y: np.ndarray, u: float) -> float:
    """Normal approximation with continuity and tie correction."""
    n, m = len(x), len(y)
    mu = n * m / 2.0
    pooled = np.concatenate([x, y])
    _, tie_counts = np.unique(pooled, return_counts=True)
    t_term = float((tie_counts.astype(np.float64) ** 3 - tie_counts).sum())
    total = n + m
    var = n * m * (total + 1) / 12.0 - n * m * t_term / (12.0 * total * (total - 1))
    if var <= 0.0:
        return 1.0
    shift = u - mu
    if shift > 0.5:
        shift -= 0.5
    elif shift < -0.5:
        shift += 0.5
    else:
        shift = 0.0
    z = shift / math.sqrt(var)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def mann_whitney_u(
    x: Sequence[float], y: Sequence[float], *, ties: str = "half"
) -> MannWhitneyResult:
    """Mann-Whitney U of x against y with a two-sided p-value.

    U counts pairs with x_i < y_j; equal pairs add 0.5 under the default
    "half" tie convention ("strict" scores them 0, the literal indicator).
    The p-value enumerates every pooled split when that is affordable,
    falls back to the tie-free exact distribution while n*m <= 10000, and
    otherwise uses the normal approximation with continuity and tie
    corrections.
    """
    if ties not in ("half", "strict"):
        raise ValueError(f"ties must be 'half' or 'strict', got {ties!r}")
    xa = np.asarray(list(x), dtype=np.float64)
    ya = np.asarray(list(y), dtype=np.float64)
    n, m = len(xa), len(ya)
    if n == 0 or m == 0:
        raise EmptySampleError("both samples must be non-empty")
    u = _u_statistic(xa, ya, ties)
    pooled = np.concatenate([xa, ya])
    has_ties = len(np.unique(pooled)) < n + m
    n_combos = math.comb(n + m, min(n, m))
    if n == 1 or m == 1:
        p = _exact_p_singleton(pooled, n, u, ties)
    elif n_combos <= _ENUM_LIMIT and n_combos * (n + m) * math.log2(n + m + 1) <= 2e6:
        p = _exact_p_enumerated(pooled, n, u, ties)
    elif not has_ties and n * m <= _EXACT_PAIR_LIMIT:
        p = _exact_p_distribution(n, m, u)
    else:
        p = _approx_p(xa, ya, u)
    return MannWhitneyResult(u, p, n, m)


def bootstrap_ci(
    values: Sequence,
    statistic: Callable[[list], float | None],
    iters: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Seeded percentile bootstrap interval of a statistic.

    Resamples with replacement; iterations where the statistic is None
    (undefined on that resample) are skipped.
    """
    vals = list(values)
    if not vals:
        raise EmptySampleError("cannot bootstrap an empty sample")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    rng = np.random.default_rng(seed)
    n = len(vals)
    draws = []
    for _ in range(iters):
        idx = rng.integers(0, n, size=n)
        s = statistic([vals[i] for i in idx])
        if s is not None:
            draws.append(float(s))
    if not draws:
        raise UndefinedMetricError("statistic was undefined on every bootstrap resample")
    lo, hi = np.percentile(draws, [(1.0 - level) / 2.0 * 100.0, (1.0 + level) / 2.0 * 100.0])
    return float(lo), float(hi)


def bland_altman(pred: Sequence[float], gt: Sequence[float]) -> BlandAltman:
    """Bland-Altman agreement of paired measurements (diffs are pred - gt).

    Reports mean difference, sample SD, 1.96-sigma limits of agreement,
    mean absolute difference, and the per-pair (mean, diff) plot points.
    """
    p = np.asarray(list(pred), dtype=np.float64)
    g = np.asarray(list(gt), dtype=np.float64)
    if len(p) != len(g):
        raise LengthMismatchError(f"got {len(p)} predictions vs {len(g)} ground truths")
    if len(p) < 2:
        raise EmptySampleError("need at least 2 pairs")
    diffs = p - g
    mean_diff = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    points = tuple(zip(((p + g) / 2.0).tolist(), diffs.tolist()))
    return BlandAltman(
        mean_diff, sd, mean_diff - 1.96 * sd, mean_diff + 1.96 * sd,
        float(np.abs(diffs).mean()), points,
    )


def _classify(pairs: list[tuple[float, float]], gt_thresh: float, pred_thresh: float):
    """(prec, rec, f1, bal_acc) of thresholded labels, or None if undefined."""
    tp = fp = fn = tn = 0
    for p, g in pairs:
        pred_pos = p <= pred_thresh
        gt_pos = g <= gt_thresh
        if pred_pos and gt_pos:
            tp += 1
        elif pred_pos:
            fp += 1
        elif gt_pos:
            fn += 1
        else:
            tn += 1
    if tp + fp == 0 or tp + fn == 0 or tn + fp == 0:
        return None
    prec = tp / (tp + fp)
    rec = tp / (tp + fn)
    f1 = 0.0 if prec + rec == 0.0 else 2.0 * prec * rec / (prec + rec)
    bal_acc = (rec + tn / (tn + fp)) / 2.0
    return prec, rec, f1, bal_acc


def severity_agreement(
    pred_mlds: Sequence[float],
    gt_mlds: Sequence[float],
    gt_thresh: float = 4.0,
    pred_thresh: float = 6.0,
    *,
    iters: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> AgreementReport:
    """Agreement between predicted and ground-truth MLDs.

    Lesions are severe when gt MLD <= gt_thresh; predictions binarize at
    the wider pred_thresh to absorb the systematic few-pixel offset between
    smooth predicted and rough annotated boundaries. Confidence intervals
    re-binarize raw MLD pairs per bootstrap resample.
    """
    ba = bland_altman(pred_mlds, gt_mlds)
    pairs = list(zip([float(v) for v in pred_mlds], [float(v) for v in gt_mlds]))
    point = _classify(pairs, gt_thresh, pred_thresh)
    if point is None:
        raise UndefinedMetricError(
            "agreement metrics are undefined (one-class cohort or no predicted positives)"
        )
    cis = []
    for k in range(4):
        cis.append(
            bootstrap_ci(
                pairs,
                lambda ps, k=k: (_classify(ps, gt_thresh, pred_thresh) or (None,) * 4)[k],
                iters=iters,
                level=level,
                seed=seed,
            )
        )
    return AgreementReport(
        ba.mad, ba.sd, ba.mean_diff, ba.loa_low, ba.loa_high,
        point[0], point[1], point[2], point[3],
        cis[0], cis[1], cis[2], cis[3],
    )
