"""Pyramidal augmentation: static 8x expansion, probabilistic dynamic
transforms with box remapping, and composite mosaic mixing.

Every sample's bytes are a pure function of (source content, config,
master seed): each (image, tier, transform) gets its own RNG stream via a
hash-derived seed, so parallel generation reproduces serial output.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import cv2
import numpy as np

from .errors import InvalidTierError
from .geometry import BoundingBox, GrayImage, LesionAnnotation, Point

TIERS = ("static", "dynamic", "composite")
MIN_BOX_AREA_FRACTION = 0.25  # boxes keeping less than this after clipping are dropped
MIN_BOX_SIDE = 2.0  # px, mosaic drop rule

STATIC_TAGS = (
    "original", "clahe", "invert", "mult_noise",
    "median_blur", "motion_blur", "defocus_blur", "pixel_shuffle",
)
DYNAMIC_TAGS = ("scale", "erase", "translate", "jiggle", "flip")


def derive_seed(master_seed: int, *parts) -> int:
    """Deterministic 64-bit stream seed from the master seed and a key."""
    key = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(f"{master_seed}|{key}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class StaticConfig:
    clahe_clip: float = 4.0
    clahe_tiles: int = 8
    noise_range: tuple[float, float] = (0.9, 1.1)
    median_kernel: int = 5
    motion_length: int = 9
    defocus_radius: int = 3
    shuffle_windows: int = 1000
    shuffle_side_range: tuple[int, int] = (4, 16)

    def __post_init__(self):
        for k in (self.median_kernel, self.motion_length):
            if k < 3 or k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd and >= 3, got {k}")
        if not self.noise_range[0] <= self.noise_range[1]:
            raise ValueError("noise_range must be ordered")
        if not 1 <= self.shuffle_side_range[0] <= self.shuffle_side_range[1]:
            raise ValueError("shuffle_side_range must be ordered and positive")


@dataclass(frozen=True)
class DynamicConfig:
    scale_prob: float = 0.5
    scale_range: tuple[float, float] = (0.8, 1.2)
    erase_prob: float = 0.5
    erase_area_range: tuple[float, float] = (0.02, 0.1)
    translate_prob: float = 0.5
    translate_frac: float = 0.1
    jiggle_prob: float = 0.5
    jiggle_range: tuple[float, float] = (0.8, 1.2)
    flip_prob: float = 0.5

    def __post_init__(self):
        for name in ("scale_prob", "erase_prob", "translate_prob", "jiggle_prob", "flip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        for name in ("scale_range", "erase_area_range", "jiggle_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered")


@dataclass(frozen=True)
class CompositeConfig:
    enabled: bool = True
    jitter_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.jitter_fraction <= 1.0:
            raise ValueError("jitter_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class AugmentConfig:
    static: StaticConfig = field(default_factory=StaticConfig)
    dynamic: DynamicConfig = field(default_factory=DynamicConfig)
    composite: CompositeConfig = field(default_factory=CompositeConfig)
    master_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        def build(klass, block):
            fields = {f: block[f] for f in block}
            for name, value in list(fields.items()):
                if isinstance(value, list):
                    fields[name] = tuple(value)
            return klass(**fields)

        return cls(
            static=build(StaticConfig, d.get("static", {})),
            dynamic=build(DynamicConfig, d.get("dynamic", {})),
            composite=build(CompositeConfig, d.get("composite", {})),
            master_seed=int(d.get("master_seed", 0)),
        )

    def to_dict(self) -> dict:
        def block(obj):
            out = {}
            for name, value in vars(obj).items():
                out[name] = list(value) if isinstance(value, tuple) else value
            return out

        return {
            "static": block(self.static),
            "dynamic": block(self.dynamic),
            "composite": block(self.composite),
            "master_seed": self.master_seed,
        }


@dataclass(frozen=True)
class Provenance:
    """What produced a sample; fully determines its bytes."""

    source_id: str
    tiers: tuple[str, ...]
    transforms: tuple[str, ...]
    seed: int


@dataclass(frozen=True, eq=False)
class AugmentedSample:
    image: GrayImage
    annotations: tuple[LesionAnnotation, ...]
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        for ann in self.annotations:
            b = ann.bbox
            if b.x_max > self.image.width or b.y_max > self.image.height:
                raise ValueError(f"annotation box {b} exceeds sample bounds")


# ---------------------------------------------------------------------------
# static tier
# ---------------------------------------------------------------------------

def _clahe(img: np.ndarray, cfg: StaticConfig, rng) -> np.ndarray:
    op = cv2.createCLAHE(clipLimit=cfg.clahe_clip,
                         tileGridSize=(cfg.clahe_tiles, cfg.clahe_tiles))
    return op.apply(img)


def _invert(img: np.ndarray, cfg: StaticConfig, rng) -> np.ndarray:
    return (255 - img.astype(np.int16)).astype(np.uint8)


def _mult_noise(img: np.ndarray, cfg: StaticConfig, rng) -> np.ndarray:
    lo, hi = cfg.noise_range
    factors = rng.uniform(lo, hi, size=img.shape)
    return np.clip(np.rint(img.astype(np.float64) * factors), 0, 255).astype(np.uint8)


def _median_blur(img: np.ndarray, cfg: StaticConfig, rng) -> np.ndarray:
    return cv2.medianBlur(img, cfg.median_kernel)


def _motion_blur(img: np.ndarray, cfg: StaticConfig, rng) -> np.ndarray:
    length = cfg.motion_length
    angle = rng.uniform(0.0, 180.0)
    kernel = np.zeros((length, length), dtype=np.float64)
    c = (length - 1) / 2.0
    dy, dx = math.sin(math.radians(angle)), math.cos(math.radians(angle))
    for t in np.linspace(-c, c, length):
        kernel[int(round(c + t * dy)), int(round(c + t * dx))] = 1.0
    kernel /= kernel.sum()
    return cv2.filter2D(img, -1, kernel)


def _defocus_blur(img: np.ndarray, cfg: StaticConfig, rng) -> np.ndarray:
    r = cfg.defocus_radius
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    kernel = (yy * yy + xx * xx <= r * r).astype(np.float64)
    kernel /= kernel.sum()
    return cv2.filter2D(img, -1, kernel)


def _pixel_shuffle(img: np.ndarray, cfg: StaticConfig, rng) -> np.ndarray:
    out = img.copy()
    h, w = out.shape
    lo, hi = cfg.shuffle_side_range
    for _ in range(cfg.shuffle_windows):
        side = int(rng.integers(lo, hi + 1))
        side = min(side, h, w)
        y0 = int(rng.integers(0, h - side + 1))
        x0 = int(rng.integers(0, w - side + 1))
        block = out[y0 : y0 + side, x0 : x0 + side]
        out[y0 : y0 + side, x0 : x0 + side] = (
            rng.permutation(block.ravel()).reshape(side, side)
        )
    return out


_STATIC_FNS: dict[str, Callable] = {
    "clahe": _clahe,
    "invert": _invert,
    "mult_noise": _mult_noise,
    "median_blur": _median_blur,
    "motion_blur": _motion_blur,
    "defocus_blur": _defocus_blur,
    "pixel_shuffle": _pixel_shuffle,
}


def static_expand(
    img: GrayImage,
    annotations: Sequence[LesionAnnotation],
    cfg: AugmentConfig,
    seed: int,
    source_id: str = "image",
) -> list[AugmentedSample]:
    """The original plus one sample per static transform (8 outputs).

    Static transforms are photometric only, so annotations are copied
    unchanged onto every output.
    """
    anns = tuple(annotations)
    samples = [
        AugmentedSample(img, anns, Provenance(source_id, ("static",), ("original",), seed))
    ]
    for tag in STATIC_TAGS[1:]:
        rng = np.random.default_rng(derive_seed(seed, "static", tag))
        data = _STATIC_FNS[tag](img.data, cfg.static, rng)
        samples.append(
            AugmentedSample(
                GrayImage(data), anns,
                Provenance(source_id, ("static",), (tag,), derive_seed(seed, "static", tag)),
            )
        )
    return samples


# ---------------------------------------------------------------------------
# dynamic tier
# ---------------------------------------------------------------------------

def remap_annotations(
    anns: Sequence[LesionAnnotation],
    affine: tuple[float, float, float, float],
    clip_rect: tuple[float, float, float, float],
    min_side: float = 0.0,
) -> tuple[LesionAnnotation, ...]:
    """Push annotations through x' = ax*x + bx, y' = ay*y + by, then clip.

    Boxes clipped below MIN_BOX_AREA_FRACTION of their remapped area (or
    thinner than min_side) are dropped. MLD points ride the same affine and
    survive only while they stay inside their clipped box.
    """
    ax, bx, ay, by = affine
    rx1, ry1, rx2, ry2 = clip_rect
    out = []
    for ann in anns:
        b = ann.bbox
        xs = sorted((ax * b.x_min + bx, ax * b.x_max + bx))
        ys = sorted((ay * b.y_min + by, ay * b.y_max + by))
        full = (xs[1] - xs[0]) * (ys[1] - ys[0])
        cx1, cy1 = max(xs[0], rx1), max(ys[0], ry1)
        cx2, cy2 = min(xs[1], rx2), min(ys[1], ry2)
        w, h = cx2 - cx1, cy2 - cy1
        if w <= 0.0 or h <= 0.0 or full <= 0.0:
            continue
        if w * h < MIN_BOX_AREA_FRACTION * full or min(w, h) < min_side:
            continue
        point = None
        if ann.mld_point is not None:
            px = ax * ann.mld_point.x + bx
            py = ay * ann.mld_point.y + by
            if cx1 <= px <= cx2 and cy1 <= py <= cy2:
                point = Point(px, py)
        out.append(LesionAnnotation(BoundingBox(cx1, cy1, cx2, cy2), point, ann.mld_px))
    return tuple(out)


def _resize(data: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    return cv2.resize(data, (new_w, new_h), interpolation=cv2.INTER_LINEAR)


def _dyn_scale(data, anns, cfg: DynamicConfig, rng):
    h, w = data.shape
    s = rng.uniform(*cfg.scale_range)
    new_w = max(1, int(round(w * s)))
    new_h = max(1, int(round(h * s)))
    resized = _resize(data, new_w, new_h)
    ox = (w - new_w) // 2  # negative when cropping
    oy = (h - new_h) // 2
    canvas = np.zeros_like(data)
    canvas[max(0, oy) : max(0, oy) + min(new_h, h), max(0, ox) : max(0, ox) + min(new_w, w)] = \
        resized[max(0, -oy) : max(0, -oy) + min(new_h, h), max(0, -ox) : max(0, -ox) + min(new_w, w)]
    affine = (new_w / w, float(ox), new_h / h, float(oy))
    return canvas, remap_annotations(anns, affine, (0.0, 0.0, float(w), float(h)))


def _dyn_erase(data, anns, cfg: DynamicConfig, rng):
    h, w = data.shape
    frac = rng.uniform(*cfg.erase_area_range)
    aspect = rng.uniform(0.5, 2.0)
    area = frac * h * w
    ew = max(1, min(w, int(round(math.sqrt(area * aspect)))))
    eh = max(1, min(h, int(round(math.sqrt(area / aspect)))))
    x0 = int(rng.integers(0, w - ew + 1))
    y0 = int(rng.integers(0, h - eh + 1))
    out = data.copy()
    out[y0 : y0 + eh, x0 : x0 + ew] = int(round(float(data.mean())))
    return out, tuple(anns)


def _dyn_translate(data, anns, cfg: DynamicConfig, rng):
    h, w = data.shape
    dx = int(round(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * w))
    dy = int(round(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * h))
    canvas = np.zeros_like(data)
    cw, ch = w - abs(dx), h - abs(dy)
    if cw > 0 and ch > 0:
        canvas[max(0, dy) : max(0, dy) + ch, max(0, dx) : max(0, dx) + cw] = \
            data[max(0, -dy) : max(0, -dy) + ch, max(0, -dx) : max(0, -dx) + cw]
    affine = (1.0, float(dx), 1.0, float(dy))
    return canvas, remap_annotations(anns, affine, (0.0, 0.0, float(w), float(h)))


def _dyn_jiggle(data, anns, cfg: DynamicConfig, rng):
    brightness = rng.uniform(*cfg.jiggle_range)
    contrast = rng.uniform(*cfg.jiggle_range)
    v = data.astype(np.float64) * brightness
    v = contrast * v + (1.0 - contrast) * v.mean()
    return np.clip(np.rint(v), 0, 255).astype(np.uint8), tuple(anns)


def _dyn_flip(data, anns, cfg: DynamicConfig, rng):
    h, w = data.shape
    affine = (-1.0, float(w), 1.0, 0.0)
    flipped = np.ascontiguousarray(data[:, ::-1])
    return flipped, remap_annotations(anns, affine, (0.0, 0.0, float(w), float(h)))


_DYNAMIC_FNS = {
    "scale": (_dyn_scale, "scale_prob"),
    "erase": (_dyn_erase, "erase_prob"),
    "translate": (_dyn_translate, "translate_prob"),
    "jiggle": (_dyn_jiggle, "jiggle_prob"),
    "flip": (_dyn_flip, "flip_prob"),
}


def apply_dynamic(sample: AugmentedSample, cfg: AugmentConfig, seed: int) -> AugmentedSample:
    """Apply the dynamic tier to one sample.

    Each transform fires independently with its configured probability, in
    the fixed order scale, erase, translate, jiggle, flip; geometric ones
    remap and clip the boxes. Each transform draws from its own seed
    stream, so toggling one never shifts another's randomness.
    """
    data = sample.image.data
    anns = sample.annotations
    applied = []
    for tag in DYNAMIC_TAGS:
        fn, prob_field = _DYNAMIC_FNS[tag]
        rng = np.random.default_rng(derive_seed(seed, "dynamic", tag))
        if rng.random() < getattr(cfg.dynamic, prob_field):
            data, anns = fn(data, anns, cfg.dynamic, rng)
            applied.append(tag)
    if not applied:
        return AugmentedSample(
            sample.image, sample.annotations,
            Provenance(
                sample.provenance.source_id,
                sample.provenance.tiers + ("dynamic",),
                sample.provenance.transforms,
                seed,
            ),
        )
    return AugmentedSample(
        GrayImage(data), anns,
        Provenance(
            sample.provenance.source_id,
            sample.provenance.tiers + ("dynamic",),
            sample.provenance.transforms + tuple(applied),
            seed,
        ),
    )


# ---------------------------------------------------------------------------
# composite tier
# ---------------------------------------------------------------------------

def mosaic(samples: Sequence[AugmentedSample], cfg: AugmentConfig, seed: int) -> AugmentedSample:
    """2x2 mosaic of four samples around a jittered center.

    The output canvas takes the first sample's dimensions; each source is
    resized into its quadrant and its boxes are remapped, clipped to the
    quadrant, and dropped when thinner than 2 px or below the minimum
    retained-area fraction.
    """
    if len(samples) != 4:
        raise ValueError(f"mosaic needs exactly 4 samples, got {len(samples)}")
    rng = np.random.default_rng(derive_seed(seed, "composite", "mosaic"))
    w, h = samples[0].image.width, samples[0].image.height
    f = cfg.composite.jitter_fraction
    cx = int(round(w * (0.5 + f * (rng.random() - 0.5))))
    cy = int(round(h * (0.5 + f * (rng.random() - 0.5))))
    cx = min(max(cx, 1), w - 1)
    cy = min(max(cy, 1), h - 1)
    rects = (
        (0, 0, cx, cy), (cx, 0, w - cx, cy),
        (0, cy, cx, h - cy), (cx, cy, w - cx, h - cy),
    )
    canvas = np.zeros((h, w), dtype=np.uint8)
    out_anns: list[LesionAnnotation] = []
    for sample, (qx, qy, qw, qh) in zip(samples, rects):
        sw, sh = sample.image.width, sample.image.height
        canvas[qy : qy + qh, qx : qx + qw] = _resize(sample.image.data, qw, qh)
        affine = (qw / sw, float(qx), qh / sh, float(qy))
        quad = (float(qx), float(qy), float(qx + qw), float(qy + qh))
        out_anns.extend(remap_annotations(sample.annotations, affine, quad, MIN_BOX_SIDE))
    tiers = []
    for sample in samples:
        for tier in sample.provenance.tiers:
            if tier not in tiers:
                tiers.append(tier)
    tiers.append("composite")
    source = "+".join(s.provenance.source_id for s in samples)
    return AugmentedSample(
        GrayImage(canvas), tuple(out_anns),
        Provenance(source, tuple(tiers), ("mosaic",), seed),
    )


# ---------------------------------------------------------------------------
# stream assembly
# ---------------------------------------------------------------------------

def _validate_tiers(tiers: Sequence[str]) -> frozenset[str]:
    tier_set = frozenset(tiers)
    unknown = tier_set - set(TIERS)
    if unknown:
        raise InvalidTierError(f"unknown tiers: {sorted(unknown)}")
    if "composite" in tier_set and "dynamic" not in tier_set:
        raise InvalidTierError("the composite tier requires dynamic inputs")
    return tier_set


def build_training_stream(
    manifest,
    cfg: AugmentConfig,
    tiers: Sequence[str],
    *,
    final_epochs: bool = False,
    image_loader: Callable[[str], GrayImage] | None = None,
) -> list[AugmentedSample]:
    """Materialize the deterministic augmented sample stream.

    The static tier expands each manifest image 8x; the dynamic tier is
    applied per sample on top; the composite tier appends one mosaic per
    consecutive group of four dynamic outputs. final_epochs drops the
    composite samples (mosaic mixing stops near the end of training).
    Output order and bytes depend only on (manifest, cfg, master seed).
    """
    tier_set = _validate_tiers(tiers)
    if image_loader is None:
        from .fileio import read_gray_png

        image_loader = read_gray_png
    records = sorted(manifest.images, key=lambda rec: rec.id)
    stream: list[AugmentedSample] = []
    for rec in records:
        img = image_loader(rec.path)
        base_seed = derive_seed(cfg.master_seed, rec.id)
        if "static" in tier_set:
            samples = static_expand(img, rec.lesions, cfg, base_seed, source_id=rec.id)
        else:
            samples = [
                AugmentedSample(
                    img, rec.lesions, Provenance(rec.id, (), ("original",), base_seed)
                )
            ]
        if "dynamic" in tier_set:
            samples = [
                apply_dynamic(s, cfg, derive_seed(cfg.master_seed, rec.id, "dynamic", k))
                for k, s in enumerate(samples)
            ]
        stream.extend(samples)
    if "composite" in tier_set and cfg.composite.enabled and not final_epochs:
        base = list(stream)
        for g in range(len(base) // 4):
            group = base[4 * g : 4 * g + 4]
            stream.append(mosaic(group, cfg, derive_seed(cfg.master_seed, "mosaic", g)))
    return stream
