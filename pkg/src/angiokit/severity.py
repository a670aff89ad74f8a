"""Rule-based lesion severity estimation from segmentation masks.

The pipeline reads arterial radii off the exact distance transform along
the mask centerline, finds the radii peaks that bracket the narrowing, and
reports the minimum lumen diameter (MLD), the maximal arterial diameter
(MAD), and the percent diameter stenosis DS = (1 - MLD/MAD) * 100.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateMaskError, EmptyMaskError
from .geometry import BinaryMask, CropContext, Point, uncrop_point
from .morphology import distance_transform, longest_path, skeletonize

DEFAULT_MIN_PROMINENCE = 0.5  # px
DEFAULT_MIN_SEPARATION = 3  # samples
DEFAULT_TRIM_FRACTION = 0.05


@dataclass(frozen=True)
class RadiusProfile:
    """Arterial radius at each centerline pixel, in path order."""

    radii: tuple[float, ...]
    points: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        object.__setattr__(self, "points", tuple((int(x), int(y)) for x, y in self.points))
        if len(self.radii) != len(self.points):
            raise ValueError("radii and points must have equal length")
        if any(r <= 0 for r in self.radii):
            raise ValueError("centerline radii must be positive")

    def __len__(self) -> int:
        return len(self.radii)


@dataclass(frozen=True)
class SeverityReport:
    """MLD, MAD, and diameter stenosis for one lesion mask (pixel units)."""

    mld_px: float
    mad_px: float
    ds_percent: float
    mld_point: Point
    peak_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "peak_indices", tuple(int(i) for i in self.peak_indices))
        if not 0 < self.mld_px <= self.mad_px:
            raise ValueError(f"need 0 < mld <= mad, got {self.mld_px}, {self.mad_px}")
        expected = (1.0 - self.mld_px / self.mad_px) * 100.0
        if abs(self.ds_percent - expected) > 1e-9:
            raise ValueError(f"ds_percent {self.ds_percent} breaks the DS identity ({expected})")


def radius_profile(mask: BinaryMask) -> RadiusProfile:
    """Distance-transform radii sampled along the mask's centerline path."""
    if not mask.data.any():
        raise EmptyMaskError("cannot profile an empty mask")
    path = longest_path(skeletonize(mask))
    dist = distance_transform(mask).data
    radii = tuple(float(dist[y, x]) for x, y in path.points)
    return RadiusProfile(radii, path.points)


def _plateau_maxima(values: np.ndarray) -> list[int]:
    """Interior strict local maxima; plateaus collapse to their center."""
    n = len(values)
    out = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[j + 1] == values[i]:
            j += 1
        if i > 0 and j < n - 1 and values[i - 1] < values[i] and values[j + 1] < values[i]:
            out.append((i + j) // 2)
        i = j + 1
    return out


def _prominence(values: np.ndarray, peak: int) -> float:
    """Peak height minus the higher of its two bases.

    Each base is the minimum between the peak and the nearest strictly
    higher sample on that side (or the profile end when none exists).
    """
    h = values[peak]
    left = h
    i = peak - 1
    while i >= 0 and values[i] <= h:
        left = min(left, values[i])
        i -= 1
    right = h
    i = peak + 1
    n = len(values)
    while i < n and values[i] <= h:
        right = min(right, values[i])
        i += 1
    return float(h - max(left, right))


def detect_peaks(
    profile: RadiusProfile | Sequence[float],
    min_prominence: float,
    min_separation: int,
) -> list[int]:
    """Indices of radii peaks, ascending.

    A peak is an interior strict local maximum (plateaus counted once, at
    their center) with prominence >= min_prominence. When peaks crowd
    closer than min_separation samples, higher peaks win (ties keep the
    earlier index).
    """
    values = np.asarray(
        profile.radii if isinstance(profile, RadiusProfile) else profile, dtype=np.float64
    )
    candidates = [
        p for p in _plateau_maxima(values) if _prominence(values, p) >= min_prominence
    ]
    if min_separation > 1 and len(candidates) > 1:
        kept: list[int] = []
        for p in sorted(candidates, key=lambda p: (-values[p], p)):
            if all(abs(p - q) >= min_separation for q in kept):
                kept.append(p)
        candidates = sorted(kept)
    return candidates


def _canonical_flips(m: np.ndarray) -> tuple[bool, bool]:
    """Choose the (flip_h, flip_v) orientation with the smallest content bytes.

    Comparing the foreground-cropped raster makes the choice independent of
    where the content sits in the canvas, so severity stays translation
    invariant while becoming exactly flip invariant (thinning alone is not:
    its sub-iterations are directionally biased).
    """
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    crop = m[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    best = (False, False)
    best_key = crop.tobytes()
    for fh, fv in ((False, True), (True, False), (True, True)):
        c = crop[:, ::-1] if fh else crop
        if fv:
            c = c[::-1, :]
        key = np.ascontiguousarray(c).tobytes()
        if key < best_key:
            best_key = key
            best = (fh, fv)
    return best


def _severity_from_profile(
    profile: RadiusProfile,
    min_prominence: float,
    min_separation: int,
    trim_fraction: float,
) -> tuple[float, float, int, list[int]]:
    """Core peak logic; returns (mld, mad, mld profile index, peaks)."""
    radii = np.asarray(profile.radii, dtype=np.float64)
    n = len(radii)
    peaks = detect_peaks(profile, min_prominence, min_separation)
    if len(peaks) >= 2 and peaks[-1] - peaks[0] >= 2:
        lo, hi = peaks[0], peaks[-1]
        valley = radii[lo + 1 : hi]
        k = lo + 1 + int(np.argmin(valley))
        mld = 2.0 * float(radii[k])
        mad = 2.0 * float(max(radii[p] for p in peaks))
        return mld, mad, k, peaks
    # Fewer than two usable peaks: trim the tapered profile ends and take
    # the global extrema of what remains.
    t = min(int(trim_fraction * n), (n - 1) // 2)
    segment = radii[t : n - t]
    k = t + int(np.argmin(segment))
    return 2.0 * float(segment.min()), 2.0 * float(segment.max()), k, peaks


def estimate_severity(
    mask: BinaryMask,
    *,
    min_prominence: float = DEFAULT_MIN_PROMINENCE,
    min_separation: int = DEFAULT_MIN_SEPARATION,
    trim_fraction: float = DEFAULT_TRIM_FRACTION,
) -> SeverityReport:
    """Estimate MLD/MAD/DS for a lesion mask.

    With two or more radii peaks, MLD doubles the minimum radius strictly
    between the first and last peak (the worst narrowing between healthy
    segments) and MAD doubles the highest peak radius. With fewer peaks the
    profile ends are trimmed by trim_fraction on each side and the global
    min/max of the remainder are used instead. Ties for the minimum resolve
    to the smallest path index.
    """
    report, _ = severity_with_profile(
        mask,
        min_prominence=min_prominence,
        min_separation=min_separation,
        trim_fraction=trim_fraction,
    )
    return report


def severity_with_profile(
    mask: BinaryMask,
    *,
    min_prominence: float = DEFAULT_MIN_PROMINENCE,
    min_separation: int = DEFAULT_MIN_SEPARATION,
    trim_fraction: float = DEFAULT_TRIM_FRACTION,
) -> tuple[SeverityReport, RadiusProfile]:
    """estimate_severity plus the radius profile the report indexes into.

    The profile's points are expressed in the coordinates of the input
    mask; peak_indices of the report address this profile directly.
    """
    m = mask.data
    if not m.any():
        raise DegenerateMaskError("mask has no foreground")
    fh, fv = _canonical_flips(m)
    canon = m[:, ::-1] if fh else m
    if fv:
        canon = canon[::-1, :]
    profile = radius_profile(BinaryMask(canon))
    if len(profile) < 3:
        raise DegenerateMaskError(f"centerline has {len(profile)} pixels; need at least 3")
    mld, mad, k, peaks = _severity_from_profile(
        profile, min_prominence, min_separation, trim_fraction
    )
    ds = (1.0 - mld / mad) * 100.0

    h, w = m.shape
    def back(x: int, y: int) -> tuple[int, int]:
        return (w - 1 - x if fh else x, h - 1 - y if fv else y)

    points = tuple(back(x, y) for x, y in profile.points)
    mx, my = points[k]
    report = SeverityReport(mld, mad, ds, Point(float(mx), float(my)), tuple(peaks))
    return report, RadiusProfile(profile.radii, points)


def severity_from_crop(
    img_mask: BinaryMask,
    ctx: CropContext,
    *,
    min_prominence: float = DEFAULT_MIN_PROMINENCE,
    min_separation: int = DEFAULT_MIN_SEPARATION,
    trim_fraction: float = DEFAULT_TRIM_FRACTION,
) -> SeverityReport:
    """Severity of a cropped mask with the MLD location mapped back.

    Diameters stay in crop-pixel units; only the MLD point is carried into
    source-image coordinates via the crop context.
    """
    report = estimate_severity(
        img_mask,
        min_prominence=min_prominence,
        min_separation=min_separation,
        trim_fraction=trim_fraction,
    )
    return SeverityReport(
        report.mld_px,
        report.mad_px,
        report.ds_percent,
        uncrop_point(report.mld_point, ctx),
        report.peak_indices,
    )
