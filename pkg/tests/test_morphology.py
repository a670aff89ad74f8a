import numpy as np
import pytest
from scipy import ndimage

from angiokit import BinaryMask, distance_transform, longest_path, skeletonize
from angiokit.errors import EmptySkeletonError

from oracles import (
    all_pairs_bfs_diameter,
    brute_force_edt,
    count_components_8,
    reference_thin,
)
from shapes import random_blob_mask

S8 = np.ones((3, 3), dtype=int)


def test_thin_line_is_fixed_point():
    m = np.zeros((8, 20), bool)
    m[4, 2:18] = True
    out = skeletonize(BinaryMask(m))
    assert np.array_equal(out.data, m)


def test_empty_mask_stays_empty():
    m = np.zeros((6, 6), bool)
    assert skeletonize(BinaryMask(m)).count() == 0


def test_skeleton_matches_reference_thinning():
    rng = np.random.default_rng(10)
    for _ in range(60):
        m = random_blob_mask(rng, max_side=32)
        ours = skeletonize(BinaryMask(m)).data
        theirs = reference_thin(m)
        assert np.array_equal(ours, theirs)


def test_skeleton_subset_idempotent_components():
    rng = np.random.default_rng(11)
    for _ in range(100):
        m = random_blob_mask(rng, max_side=40)
        s = skeletonize(BinaryMask(m)).data
        assert not (s & ~m).any()
        assert np.array_equal(skeletonize(BinaryMask(s)).data, s)
        assert ndimage.label(s, structure=S8)[1] == ndimage.label(m, structure=S8)[1]


def test_isolated_square_survives_thinning():
    m = np.zeros((6, 6), bool)
    m[2:4, 2:4] = True
    s = skeletonize(BinaryMask(m))
    assert s.count() == 1
    assert count_components_8(s.data) == 1


def test_edt_trivials():
    assert not distance_transform(BinaryMask(np.zeros((5, 7), bool))).data.any()
    single = np.zeros((5, 5), bool)
    single[2, 2] = True
    d = distance_transform(BinaryMask(single))
    assert d.data[2, 2] == 1.0
    # corner pixel: the virtual border frame is one step away
    corner = np.zeros((4, 4), bool)
    corner[0, 0] = True
    assert distance_transform(BinaryMask(corner)).data[0, 0] == 1.0


def test_edt_matches_brute_force_exactly():
    rng = np.random.default_rng(12)
    for _ in range(40):
        m = rng.random((int(rng.integers(3, 20)), int(rng.integers(3, 20)))) < 0.5
        d = distance_transform(BinaryMask(m)).data
        assert np.array_equal(d, brute_force_edt(m))


def test_longest_path_straight_line():
    m = np.zeros((5, 30), bool)
    m[2, 3:27] = True
    path = longest_path(BinaryMask(m))
    assert len(path) == 24
    assert {path.points[0], path.points[-1]} == {(3, 2), (26, 2)}


def test_longest_path_single_pixel():
    m = np.zeros((3, 3), bool)
    m[1, 1] = True
    assert longest_path(BinaryMask(m)).points == ((1, 1),)


def test_longest_path_empty_raises():
    with pytest.raises(EmptySkeletonError):
        longest_path(BinaryMask(np.zeros((3, 3), bool)))


def _random_tree_skeleton(rng, size=24, steps=60):
    """Grow a pixel set whose 8-adjacency graph is a tree: each new pixel
    must touch exactly one existing pixel when added."""
    m = np.zeros((size, size), bool)
    start = (size // 2, size // 2)
    m[start] = True
    pixels = [start]
    for _ in range(steps):
        y, x = pixels[rng.integers(0, len(pixels))]
        dy, dx = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))
        ny, nx = y + dy, x + dx
        if not (0 <= ny < size and 0 <= nx < size) or m[ny, nx]:
            continue
        touching = sum(
            m[ny + ey, nx + ex]
            for ey in (-1, 0, 1)
            for ex in (-1, 0, 1)
            if (ey, ex) != (0, 0) and 0 <= ny + ey < size and 0 <= nx + ex < size
        )
        if touching == 1:
            m[ny, nx] = True
            pixels.append((ny, nx))
    return m


def test_longest_path_equals_bfs_diameter_on_trees():
    rng = np.random.default_rng(13)
    for _ in range(40):
        m = _random_tree_skeleton(rng)
        path = longest_path(BinaryMask(m))
        assert len(path) == all_pairs_bfs_diameter(m) + 1
        # consecutive points are 8-neighbors and distinct
        pts = path.points
        assert len(set(pts)) == len(pts)
        for (x1, y1), (x2, y2) in zip(pts, pts[1:]):
            assert max(abs(x1 - x2), abs(y1 - y2)) == 1


def test_path_endpoints_have_degree_one_on_trees():
    rng = np.random.default_rng(14)
    checked = 0
    for _ in range(40):
        m = _random_tree_skeleton(rng, steps=40)
        if m.sum() < 2:
            continue
        checked += 1
        pts = {(int(y), int(x)) for y, x in np.argwhere(m)}
        path = longest_path(BinaryMask(m))
        for x, y in (path.points[0], path.points[-1]):
            degree = sum(
                1
                for dy in (-1, 0, 1)
                for dx in (-1, 0, 1)
                if (dy, dx) != (0, 0) and (y + dy, x + dx) in pts
            )
            assert degree == 1
    assert checked >= 10
