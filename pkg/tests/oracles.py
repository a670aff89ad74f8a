"""Independent reference implementations used as test oracles.

Everything here is deliberately written in plain-loop style, separate from
the library's vectorized code paths, so the two can disagree.
"""

from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np

# ---------------------------------------------------------------------------
# Zhang-Suen thinning, pixel-by-pixel
# ---------------------------------------------------------------------------

def _neighbors_ring(grid, y, x):
    """p2..p9 clockwise from north, 0 outside the grid."""
    h, w = len(grid), len(grid[0])
    ring = []
    for dy, dx in ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)):
        ny, nx = y + dy, x + dx
        ring.append(grid[ny][nx] if 0 <= ny < h and 0 <= nx < w else 0)
    return ring


def _flood_component(grid, sy, sx, seen):
    h, w = len(grid), len(grid[0])
    comp = []
    stack = [(sy, sx)]
    seen[sy][sx] = True
    while stack:
        y, x = stack.pop()
        comp.append((y, x))
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and grid[ny][nx] and not seen[ny][nx]:
                    seen[ny][nx] = True
                    stack.append((ny, nx))
    return comp


def reference_thin(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning with the erase-guard, coded with explicit loops."""
    grid = [[1 if v else 0 for v in row] for row in mask]
    h, w = len(grid), len(grid[0])
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            marked = []
            for y in range(h):
                for x in range(w):
                    if not grid[y][x]:
                        continue
                    ring = _neighbors_ring(grid, y, x)
                    b = sum(ring)
                    if b < 2 or b > 6:
                        continue
                    a = sum(
                        1 for i in range(8) if ring[i] == 0 and ring[(i + 1) % 8] == 1
                    )
                    if a != 1:
                        continue
                    p2, p3, p4, p5, p6, p7, p8, p9 = ring
                    if step == 0:
                        ok = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
                    else:
                        ok = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
                    if ok:
                        marked.append((y, x))
            if marked:
                # keep the first row-major pixel of any fully-marked component
                marked_set = set(marked)
                seen = [[False] * w for _ in range(h)]
                for y in range(h):
                    for x in range(w):
                        if grid[y][x] and not seen[y][x]:
                            comp = _flood_component(grid, y, x, seen)
                            if all(p in marked_set for p in comp):
                                keeper = min(comp)
                                marked_set.discard(keeper)
                for y, x in marked_set:
                    grid[y][x] = 0
                    changed = True
    return np.array(grid, dtype=bool)


def count_components_8(mask: np.ndarray) -> int:
    grid = [[1 if v else 0 for v in row] for row in mask]
    h, w = len(grid), len(grid[0])
    seen = [[False] * w for _ in range(h)]
    n = 0
    for y in range(h):
        for x in range(w):
            if grid[y][x] and not seen[y][x]:
                _flood_component(grid, y, x, seen)
                n += 1
    return n


# ---------------------------------------------------------------------------
# brute-force Euclidean distance transform (border frame included)
# ---------------------------------------------------------------------------

def brute_force_edt(mask: np.ndarray) -> np.ndarray:
    """All-pairs nearest-background minimization over the padded raster."""
    padded = np.pad(mask, 1, constant_values=False)
    bg = np.argwhere(~padded)
    out = np.zeros(mask.shape, dtype=np.float64)
    for y in range(mask.shape[0]):
        for x in range(mask.shape[1]):
            if mask[y, x]:
                d2 = ((bg - np.array([y + 1, x + 1])) ** 2).sum(axis=1).min()
                out[y, x] = np.sqrt(float(d2))
    return out


# ---------------------------------------------------------------------------
# all-pairs BFS diameter over a skeleton pixel graph
# ---------------------------------------------------------------------------

def bfs_hops(pixels: set, start) -> dict:
    dist = {start: 0}
    queue = deque([start])
    while queue:
        y, x = queue.popleft()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                nxt = (y + dy, x + dx)
                if nxt in pixels and nxt not in dist:
                    dist[nxt] = dist[(y, x)] + 1
                    queue.append(nxt)
    return dist


def all_pairs_bfs_diameter(mask: np.ndarray) -> int:
    """Longest shortest-path (in hops) between any two skeleton pixels."""
    pixels = {(int(y), int(x)) for y, x in np.argwhere(mask)}
    best = 0
    for start in pixels:
        dist = bfs_hops(pixels, start)
        best = max(best, max(dist.values()))
    return best


# ---------------------------------------------------------------------------
# exhaustive peak prominence
# ---------------------------------------------------------------------------

def reference_peaks(values, min_prominence, min_separation):
    """Plateau-collapsed interior maxima, prominence- and distance-filtered."""
    vals = list(values)
    n = len(vals)
    maxima = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and vals[j + 1] == vals[i]:
            j += 1
        if i > 0 and j < n - 1 and vals[i - 1] < vals[i] and vals[j + 1] < vals[i]:
            maxima.append((i + j) // 2)
        i = j + 1
    kept = []
    for p in maxima:
        h = vals[p]
        left = h
        k = p - 1
        while k >= 0 and vals[k] <= h:
            left = min(left, vals[k])
            k -= 1
        right = h
        k = p + 1
        while k < n and vals[k] <= h:
            right = min(right, vals[k])
            k += 1
        if h - max(left, right) >= min_prominence:
            kept.append(p)
    if min_separation > 1 and len(kept) > 1:
        chosen = []
        for p in sorted(kept, key=lambda q: (-vals[q], q)):
            if all(abs(p - q) >= min_separation for q in chosen):
                chosen.append(p)
        kept = sorted(chosen)
    return kept


# ---------------------------------------------------------------------------
# brute-force detection evaluator
# ---------------------------------------------------------------------------

def _iou(a, b) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def reference_greedy_flags(dets, gts, thresh):
    """dets: list of (box, conf); gts: list of box. Returns per-det TP flags."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    used = [False] * len(gts)
    flags = [False] * len(dets)
    for i in order:
        best, best_j = 0.0, -1
        for j in range(len(gts)):
            if used[j]:
                continue
            v = _iou(dets[i][0], gts[j])
            if v >= thresh and v > best:
                best, best_j = v, j
        if best_j >= 0:
            used[best_j] = True
            flags[i] = True
    return flags


def reference_ap(scored_flags, n_gt) -> float:
    """scored_flags: list of (conf, image_key, det_index, is_tp)."""
    if n_gt == 0:
        raise ZeroDivisionError("no ground truth")
    rows = sorted(scored_flags, key=lambda r: (-r[0], r[1], r[2]))
    tp = 0
    points = []
    for k, row in enumerate(rows):
        if row[3]:
            tp += 1
        points.append((tp / n_gt, tp / (k + 1)))
    total = 0.0
    for i in range(101):
        r = i / 100.0
        best = 0.0
        for rec, prec in points:
            if rec >= r and prec > best:
                best = prec
        total += best
    return total / 101.0


def reference_map_suite(images):
    """images: dict key -> (dets, gts) with dets [(box, conf)], gts [box].

    Returns the same eight numbers map_suite produces: dicts for image and
    lesion level with precision/recall/map50/map5095 (None when undefined).
    """
    thresholds = [(50 + 5 * k) / 100.0 for k in range(10)]

    def ap_over(keys, thresh):
        scored = []
        n_gt = 0
        for key in keys:
            dets, gts = images[key]
            flags = reference_greedy_flags(dets, gts, thresh)
            n_gt += len(gts)
            for i, (box_conf, flag) in enumerate(zip(dets, flags)):
                scored.append((box_conf[1], key, i, flag))
        return reference_ap(scored, n_gt)

    keys = sorted(images)
    tp = fp = fn = 0
    for key in keys:
        dets, gts = images[key]
        flags = reference_greedy_flags(dets, gts, 0.5)
        tp += sum(flags)
        fp += sum(1 for f in flags if not f)
        fn += len(gts) - sum(flags)
    lesion = {
        "precision": tp / (tp + fp) if tp + fp else None,
        "recall": tp / (tp + fn),
        "map50": ap_over(keys, 0.5),
        "map5095": sum(ap_over(keys, t) for t in thresholds) / len(thresholds),
    }

    precs, recs, ap50s, ap5095s = [], [], [], []
    for key in keys:
        dets, gts = images[key]
        flags = reference_greedy_flags(dets, gts, 0.5)
        if gts:
            recs.append(sum(flags) / len(gts))
        if dets:
            precs.append(sum(flags) / len(dets))
            if gts:
                ap50s.append(ap_over([key], 0.5))
                ap5095s.append(sum(ap_over([key], t) for t in thresholds) / len(thresholds))
            else:
                ap50s.append(0.0)
                ap5095s.append(0.0)
    image = {
        "precision": sum(precs) / len(precs) if precs else None,
        "recall": sum(recs) / len(recs) if recs else None,
        "map50": sum(ap50s) / len(ap50s) if ap50s else None,
        "map5095": sum(ap5095s) / len(ap5095s) if ap5095s else None,
    }
    return image, lesion


# ---------------------------------------------------------------------------
# Mann-Whitney permutation oracle
# ---------------------------------------------------------------------------

def reference_u(x, y) -> float:
    u = 0.0
    for xi in x:
        for yj in y:
            if xi < yj:
                u += 1.0
            elif xi == yj:
                u += 0.5
    return u


def reference_mw_p(x, y) -> float:
    """Exact two-sided p over every split of the pooled sample."""
    pooled = list(x) + list(y)
    n = len(x)
    center = n * len(y) / 2.0
    obs = abs(reference_u(x, y) - center)
    hits = 0
    count = 0
    for combo in itertools.combinations(range(len(pooled)), n):
        chosen = set(combo)
        xs = [pooled[i] for i in range(len(pooled)) if i in chosen]
        ys = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        count += 1
        if abs(reference_u(xs, ys) - center) >= obs - 1e-12:
            hits += 1
    return hits / count


# ---------------------------------------------------------------------------
# brute-force MHD
# ---------------------------------------------------------------------------

def reference_mhd(pred: np.ndarray, gt: np.ndarray) -> float:
    a = [(int(y), int(x)) for y, x in np.argwhere(pred)]
    b = [(int(y), int(x)) for y, x in np.argwhere(gt)]

    def directed(src, dst):
        total = 0.0
        for (y, x) in src:
            total += min(math.hypot(y - qy, x - qx) for qy, qx in dst)
        return total / len(src)

    return max(directed(a, b), directed(b, a))
