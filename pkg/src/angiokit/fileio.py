"""PNG and JSON file handling with schema validation.

Manifest schema:
    {"images": [{"id", "path", "width", "height",
                 "lesions": [{"bbox": [x1, y1, x2, y2],
                              "mld_point": [x, y] | null,
                              "mld_px": number | null}]}]}
Detections schema:
    {"detections": [{"image_id", "bbox": [x1, y1, x2, y2], "confidence"}]}

JSON emitted by this module sorts keys and rounds floats to 9 significant
digits so reruns are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import SchemaError
from .geometry import (
    BinaryMask,
    BoundingBox,
    DatasetManifest,
    Detection,
    GrayImage,
    ImageRecord,
    LesionAnnotation,
    Point,
)

MASK_THRESHOLD = 128  # pixels at or above this value are foreground


def read_gray_png(path: str | Path) -> GrayImage:
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        return GrayImage(np.asarray(im, dtype=np.uint8))


def read_mask_png(path: str | Path, threshold: int = MASK_THRESHOLD) -> BinaryMask:
    img = read_gray_png(path)
    return BinaryMask(img.data >= threshold)


def write_gray_png(img: GrayImage, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.data, mode="L").save(path, format="PNG")


def write_mask_png(mask: BinaryMask, path: str | Path) -> None:
    write_gray_png(GrayImage(mask.data.astype(np.uint8) * 255), path)


def _round9(value: float) -> float:
    return float(f"{value:.9g}")


def _canonical(obj):
    """Round floats to 9 significant digits recursively."""
    if isinstance(obj, float):
        return _round9(obj)
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def dump_json(obj, path: str | Path) -> None:
    """Write diff-stable JSON: sorted keys, 9-significant-digit floats."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_canonical(obj), sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SchemaError(msg)


def _parse_bbox(raw, where: str) -> BoundingBox:
    _require(
        isinstance(raw, list) and len(raw) == 4
        and all(isinstance(v, (int, float)) for v in raw),
        f"{where}: bbox must be a list of 4 numbers",
    )
    try:
        return BoundingBox(*[float(v) for v in raw])
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def _parse_lesion(raw, where: str) -> LesionAnnotation:
    _require(isinstance(raw, dict), f"{where}: lesion must be an object")
    bbox = _parse_bbox(raw.get("bbox"), where)
    point = None
    if raw.get("mld_point") is not None:
        rp = raw["mld_point"]
        _require(
            isinstance(rp, list) and len(rp) == 2
            and all(isinstance(v, (int, float)) for v in rp),
            f"{where}: mld_point must be [x, y]",
        )
        point = Point(float(rp[0]), float(rp[1]))
    mld_px = raw.get("mld_px")
    if mld_px is not None:
        _require(isinstance(mld_px, (int, float)), f"{where}: mld_px must be a number")
        mld_px = float(mld_px)
    try:
        return LesionAnnotation(bbox, point, mld_px)
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def load_manifest(path: str | Path) -> DatasetManifest:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read manifest {path}: {exc}") from exc
    _require(isinstance(raw, dict) and isinstance(raw.get("images"), list),
             "manifest must be an object with an 'images' list")
    records = []
    for i, entry in enumerate(raw["images"]):
        where = f"images[{i}]"
        _require(isinstance(entry, dict), f"{where}: must be an object")
        for key, kind in (("id", str), ("path", str), ("width", int), ("height", int)):
            _require(isinstance(entry.get(key), kind), f"{where}: '{key}' must be {kind.__name__}")
        lesions = entry.get("lesions", [])
        _require(isinstance(lesions, list), f"{where}: 'lesions' must be a list")
        parsed = tuple(
            _parse_lesion(raw_lesion, f"{where}.lesions[{j}]")
            for j, raw_lesion in enumerate(lesions)
        )
        try:
            records.append(
                ImageRecord(entry["id"], entry["path"], entry["width"], entry["height"], parsed)
            )
        except ValueError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
    try:
        return DatasetManifest(tuple(records))
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def manifest_to_dict(manifest: DatasetManifest, extras: dict | None = None) -> dict:
    """JSON form of a manifest; extras maps image id to extra fields."""
    images = []
    for rec in manifest.images:
        lesions = []
        for lesion in rec.lesions:
            b = lesion.bbox
            lesions.append({
                "bbox": [b.x_min, b.y_min, b.x_max, b.y_max],
                "mld_point": (
                    [lesion.mld_point.x, lesion.mld_point.y] if lesion.mld_point else None
                ),
                "mld_px": lesion.mld_px,
            })
        entry = {
            "id": rec.id, "path": rec.path,
            "width": rec.width, "height": rec.height, "lesions": lesions,
        }
        if extras and rec.id in extras:
            entry.update(extras[rec.id])
        images.append(entry)
    return {"images": images}


def load_detections(path: str | Path) -> list[Detection]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read detections {path}: {exc}") from exc
    _require(isinstance(raw, dict) and isinstance(raw.get("detections"), list),
             "detections file must be an object with a 'detections' list")
    out = []
    for i, entry in enumerate(raw["detections"]):
        where = f"detections[{i}]"
        _require(isinstance(entry, dict), f"{where}: must be an object")
        _require(isinstance(entry.get("image_id"), str), f"{where}: 'image_id' must be a string")
        _require(isinstance(entry.get("confidence"), (int, float)),
                 f"{where}: 'confidence' must be a number")
        bbox = _parse_bbox(entry.get("bbox"), where)
        try:
            out.append(Detection(entry["image_id"], bbox, float(entry["confidence"])))
        except ValueError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
    return out
