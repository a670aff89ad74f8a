"""Skeletonization, exact distance transform, and centerline path extraction.

These are the geometric primitives under severity estimation and clDice:
Zhang-Suen thinning, an exact Euclidean distance transform with the image
border treated as background, and a double-BFS longest path over the
skeleton pixel graph.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptySkeletonError
from .geometry import BinaryMask, _freeze

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)

# 8-neighborhood in fixed scan order; BFS determinism depends on it.
_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True, eq=False)
class DistanceMap:
    """Per-pixel Euclidean distance to the nearest background pixel."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("distance map must be 2-D")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SkeletonPath:
    """Ordered centerline pixels as (x, y) integer coordinates.

    Consecutive points are 8-neighbors and every point lies on the skeleton
    the path was extracted from.
    """

    points: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((int(x), int(y)) for x, y in self.points))
        if not self.points:
            raise ValueError("skeleton path cannot be empty")

    def __len__(self) -> int:
        return len(self.points)


def _pass_candidates(m: np.ndarray, step: int) -> np.ndarray:
    """Deletable pixels for one Zhang-Suen sub-iteration (0 or 1).

    Conditions per pixel p1 with 8-neighbors p2..p9 clockwise from north:
    2 <= B(p1) <= 6, A(p1) == 1, and the step's two directional products
    are zero, where B counts foreground neighbors and A counts 0->1
    transitions around the ring.
    """
    p = np.pad(m, 1).astype(np.uint8)
    center = p[1:-1, 1:-1]
    p2 = p[:-2, 1:-1]
    p3 = p[:-2, 2:]
    p4 = p[1:-1, 2:]
    p5 = p[2:, 2:]
    p6 = p[2:, 1:-1]
    p7 = p[2:, :-2]
    p8 = p[1:-1, :-2]
    p9 = p[:-2, :-2]
    ring = (p2, p3, p4, p5, p6, p7, p8, p9)
    b = np.zeros_like(center, dtype=np.uint8)
    a = np.zeros_like(center, dtype=np.uint8)
    for i in range(8):
        b += ring[i]
        a += (ring[i] == 0) & (ring[(i + 1) % 8] == 1)
    if step == 0:
        direc = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    else:
        direc = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    return (center == 1) & (b >= 2) & (b <= 6) & (a == 1) & direc


def _guard_erasure(m: np.ndarray, cand: np.ndarray) -> np.ndarray:
    """Unmark one pixel per component that the pass would erase entirely.

    Parallel Zhang-Suen deletes isolated 2x2 blocks outright; retaining the
    first row-major pixel of any fully-marked component keeps the component
    count stable without disturbing other deletions.
    """
    # A fully-marked component has no surviving pixel in any member's
    # 8-neighborhood (distinct components are never 8-adjacent), so when
    # every candidate touches a survivor the expensive labeling can be
    # skipped.
    survivors = m & ~cand
    near_survivor = ndimage.binary_dilation(survivors, structure=EIGHT_CONNECTED.astype(bool))
    if not (cand & ~near_survivor).any():
        return cand
    labels, n = ndimage.label(m, structure=EIGHT_CONNECTED)
    if n == 0:
        return cand
    total = np.bincount(labels.ravel(), minlength=n + 1)
    marked = np.bincount(labels.ravel()[cand.ravel()], minlength=n + 1)
    doomed = np.flatnonzero((marked == total) & (total > 0))
    if doomed.size:
        cand = cand.copy()
        doomed_set = set(int(v) for v in doomed)
        flat_labels = labels.ravel()
        for lab in doomed_set:
            first = np.flatnonzero(flat_labels == lab)[0]
            cand.ravel()[first] = False
    return cand


def _thin(m: np.ndarray) -> np.ndarray:
    m = m.astype(bool).copy()
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            cand = _pass_candidates(m, step)
            if cand.any():
                cand = _guard_erasure(m, cand)
            if cand.any():
                m[cand] = False
                changed = True
    return m


def skeletonize(mask: BinaryMask) -> BinaryMask:
    """Zhang-Suen thinning to a one-pixel-wide, 8-connected skeleton.

    The result is a subset of the input foreground with the same number of
    8-connected components; re-applying the operation is a no-op. Empty
    masks map to empty masks.
    """
    m = mask.data
    if not m.any():
        return BinaryMask(np.zeros_like(m))
    # Thinning is local, so restrict work to the foreground bounding box
    # (with a 1-pixel background margin).
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    thinned = _thin(m[r0:r1, c0:c1])
    out = np.zeros_like(m)
    out[r0:r1, c0:c1] = thinned
    return BinaryMask(out)


def distance_transform(mask: BinaryMask) -> DistanceMap:
    """Exact Euclidean distance to the nearest background pixel.

    The image border counts as adjacent to background (a virtual background
    frame), so a foreground pixel in the corner of the raster has distance 1.
    Background pixels are exactly 0.
    """
    m = mask.data
    if not m.any():
        return DistanceMap(np.zeros(m.shape, dtype=np.float64))
    # Everything outside the tight foreground box is background, and the
    # nearest outside-the-box background to any inside pixel always lies on
    # the one-pixel ring around it, so padding the cropped box reproduces
    # the full-raster transform exactly (the ring doubles as the virtual
    # frame when the content touches the border).
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    padded = np.pad(m[r0:r1, c0:c1], 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded)
    out = np.zeros(m.shape, dtype=np.float64)
    out[r0:r1, c0:c1] = dist[1:-1, 1:-1]
    return DistanceMap(out)


def _bfs(start: int, adj: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Hop distances and parents from start over an adjacency list."""
    n = len(adj)
    dist = np.full(n, -1, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    dist[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                parent[v] = u
                queue.append(v)
    return dist, parent


def _farthest(dist: np.ndarray) -> int:
    """Index of the maximum distance; ties resolve to the smallest index."""
    return int(np.argmax(dist))


def longest_path(skel: BinaryMask) -> SkeletonPath:
    """Longest geodesic path through the largest skeleton component.

    Found by a double breadth-first sweep: farthest pixel from an arbitrary
    start, then farthest from that. Exact on tree-shaped skeletons; cycles
    resolve through the BFS spanning tree. Side branches are excluded.
    """
    m = skel.data
    if not m.any():
        raise EmptySkeletonError("cannot extract a path from an empty skeleton")
    labels, n = ndimage.label(m, structure=EIGHT_CONNECTED)
    if n > 1:
        sizes = ndimage.sum_labels(m.astype(np.int64), labels, index=np.arange(1, n + 1))
        keep = 1 + int(np.argmax(sizes))
        m = labels == keep

    ys, xs = np.nonzero(m)  # row-major order, deterministic
    coords = list(zip(ys.tolist(), xs.tolist()))
    index = {c: i for i, c in enumerate(coords)}
    adj: list[list[int]] = []
    for (y, x) in coords:
        nbrs = []
        for dy, dx in _NEIGHBORS:
            j = index.get((y + dy, x + dx))
            if j is not None:
                nbrs.append(j)
        adj.append(nbrs)

    dist0, _ = _bfs(0, adj)
    u = _farthest(dist0)
    dist1, parent = _bfs(u, adj)
    v = _farthest(dist1)

    chain = []
    node = v
    while node != -1:
        chain.append(node)
        node = int(parent[node])
    chain.reverse()  # path runs from u to v
    return SkeletonPath(tuple((coords[i][1], coords[i][0]) for i in chain))
