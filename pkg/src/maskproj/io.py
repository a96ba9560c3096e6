"""Ingestion and conversion: dataset configs, detection JSON, run-length and
PNG mask encodings, and the semantic-segments-to-instances converter.

File formats are documented in docs/FORMATS.md; every loader/saver pair
round-trips bit-exactly.
"""
from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .types import (
    BBox,
    CanvasSpec,
    Detection,
    InstanceMask,
    LabelMap,
    MaskProjError,
    ValidationError,
    validate_detection,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ParseError(MaskProjError):
    """A file failed to parse; the message carries position information."""


class UnknownClassName(MaskProjError):
    """A detection names a class absent from the dataset config."""


class UnsupportedFormat(MaskProjError):
    """An image file is not a single-channel 8/16-bit label map."""


class RunSumMismatch(MaskProjError):
    """RLE run lengths do not sum to the stated mask size."""


class MissingPair(MaskProjError):
    """A ground-truth file has no prediction counterpart (or vice versa)."""


@dataclass(frozen=True)
class DatasetConfig:
    """Dataset binding: ordered class names plus evaluation/projection defaults."""

    class_names: tuple[str, ...]
    ignore_value: int = 255
    include_background: bool = True
    scale: int = 4
    mask_dims: tuple[int, int] = (28, 28)
    image_size: tuple[int, int] | None = None  # (H, W) default when files omit it

    def __post_init__(self) -> None:
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class names must be unique")
        if len(self.class_names) < 1:
            raise ValueError("at least one class is required")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_id(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise UnknownClassName(f"class {name!r} not in config") from None


def load_dataset_config(path: str) -> DatasetConfig:
    """Read a TOML or JSON config; keys documented in docs/FORMATS.md."""
    text_keys = {
        "class_names",
        "ignore_value",
        "include_background",
        "scale",
        "mask_height",
        "mask_width",
        "image_height",
        "image_width",
    }
    try:
        if str(path).endswith(".json"):
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        else:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno} column {e.colno} (char {e.pos})") from e
    except tomllib.TOMLDecodeError as e:
        raise ParseError(f"{path}: invalid TOML: {e}") from e
    unknown = set(raw) - text_keys
    if unknown:
        raise ParseError(f"{path}: unknown config keys {sorted(unknown)}")
    if "class_names" not in raw:
        raise ParseError(f"{path}: missing required key 'class_names'")
    size = None
    if "image_height" in raw or "image_width" in raw:
        if not ("image_height" in raw and "image_width" in raw):
            raise ParseError(f"{path}: image_height and image_width must appear together")
        size = (int(raw["image_height"]), int(raw["image_width"]))
    return DatasetConfig(
        class_names=tuple(str(n) for n in raw["class_names"]),
        ignore_value=int(raw.get("ignore_value", 255)),
        include_background=bool(raw.get("include_background", True)),
        scale=int(raw.get("scale", 4)),
        mask_dims=(int(raw.get("mask_height", 28)), int(raw.get("mask_width", 28))),
        image_size=size,
    )


# ── run-length encoding ──────────────────────────────────────────────────


def decode_rle(counts: list[int], dims: tuple[int, int]) -> np.ndarray:
    """Expand column-major run lengths (first run counts zeros) to a binary
    (h, w) uint8 mask; inverse of encode_rle."""
    h, w = dims
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise RunSumMismatch("negative run length")
    if int(counts.sum()) != h * w:
        raise RunSumMismatch(f"runs sum to {int(counts.sum())}, expected {h * w}")
    flat = np.repeat(np.arange(counts.size, dtype=np.int64) % 2, counts).astype(np.uint8)
    return flat.reshape((h, w), order="F")


def encode_rle(mask: np.ndarray) -> list[int]:
    """Column-major run lengths of a binary mask, starting with a zero-run
    (possibly of length 0 when the first pixel is set)."""
    flat = np.asarray(mask).astype(bool).ravel(order="F").astype(np.int8)
    if flat.size == 0:
        return []
    changes = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(edges).tolist()
    if flat[0] == 1:
        runs.insert(0, 0)
    return [int(r) for r in runs]


# ── label-map images ─────────────────────────────────────────────────────


def load_labelmap(path: str, config: DatasetConfig) -> LabelMap:
    """Read a single-channel 8-bit or 16-bit PNG of verbatim label values."""
    with Image.open(path) as img:
        if img.mode not in ("L", "I", "I;16"):
            raise UnsupportedFormat(
                f"{path}: mode {img.mode!r} is not a single-channel 8/16-bit label map"
            )
        arr = np.asarray(img)
    return LabelMap(
        values=arr.astype(np.int32),
        num_classes=config.num_classes,
        ignore_value=config.ignore_value,
    )


def save_labelmap(lm: LabelMap, path: str) -> None:
    """Write labels verbatim: 8-bit when every value fits, else 16-bit."""
    vals = lm.values
    if vals.max(initial=0) < 256:
        img = Image.fromarray(vals.astype(np.uint8), mode="L")
    else:
        img = Image.fromarray(vals.astype(np.uint16))
    img.save(path, format="PNG")


# ── detection JSON ───────────────────────────────────────────────────────


@dataclass
class ImageDetections:
    """All detections of one image, ordinals assigned by file order."""

    image_id: str
    detections: list[Detection] = field(default_factory=list)
    image_size: tuple[int, int] | None = None  # (H, W)


def _decode_mask(entry: dict, base_dir: str) -> InstanceMask:
    h, w = int(entry["h"]), int(entry["w"])
    kinds = [k for k in ("rle", "dense", "png_path") if k in entry]
    if len(kinds) != 1:
        raise ParseError(f"mask must carry exactly one of rle/dense/png_path, got {kinds}")
    if kinds[0] == "rle":
        return InstanceMask(decode_rle(entry["rle"], (h, w)).astype(np.float32))
    if kinds[0] == "dense":
        vals = np.asarray(entry["dense"], dtype=np.float32)
        if vals.size != h * w:
            raise ParseError(f"dense mask has {vals.size} values, expected {h * w}")
        return InstanceMask(vals.reshape(h, w))
    png = os.path.join(base_dir, entry["png_path"])
    with Image.open(png) as img:
        if img.mode != "L":
            raise UnsupportedFormat(f"{png}: mask PNG must be 8-bit single-channel")
        arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.shape != (h, w):
        raise ParseError(f"{png}: mask PNG is {arr.shape}, header says {(h, w)}")
    return InstanceMask(arr)


def load_detections(path: str, config: DatasetConfig) -> dict[str, ImageDetections]:
    """Parse the documented detection JSON into validated per-image lists.

    Ordinals within each image run 0, 1, ... in file order. Validation
    failures name the offending record index.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(
            f"{path}: invalid JSON at line {e.lineno} column {e.colno} (char {e.pos})"
        ) from e
    if not isinstance(raw, list):
        raise ParseError(f"{path}: top level must be an array of detection records")

    base_dir = os.path.dirname(os.path.abspath(path))
    # minimal stand-in: validate_detection only consults num_classes
    pseudo_spec = CanvasSpec(num_classes=config.num_classes, height=1, width=1, scale=1)

    images: dict[str, ImageDetections] = {}
    for i, rec in enumerate(raw):
        try:
            image_id = str(rec["image_id"])
            if not any(k in rec for k in ("class", "score", "bbox", "mask")):
                # image stub: registers an image with no detections, so a
                # detection-free image still yields an (all-background) output
                img = images.setdefault(image_id, ImageDetections(image_id=image_id))
                if "image_size" in rec:
                    h, w = (int(v) for v in rec["image_size"])
                    if img.image_size not in (None, (h, w)):
                        raise ParseError(f"conflicting image_size for image {image_id!r}")
                    img.image_size = (h, w)
                continue
            cls = rec["class"]
            class_id = config.class_id(cls) if isinstance(cls, str) else int(cls)
            x0, y0, x1, y1 = (float(v) for v in rec["bbox"])
            mask = _decode_mask(rec["mask"], base_dir)
            img = images.setdefault(image_id, ImageDetections(image_id=image_id))
            det = Detection(
                class_id=class_id,
                score=float(rec["score"]),
                bbox=BBox(x0, y0, x1, y1),
                mask=mask,
                index=len(img.detections),
            )
            validate_detection(det, pseudo_spec)
            if "image_size" in rec:
                h, w = (int(v) for v in rec["image_size"])
                if img.image_size not in (None, (h, w)):
                    raise ParseError(f"conflicting image_size for image {image_id!r}")
                img.image_size = (h, w)
            img.detections.append(det)
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}: record {i}: missing or malformed field ({e})") from e
        except ValidationError as e:
            raise type(e)(f"record {i}: {e}") from e
    return images


def save_detections(images: list[ImageDetections], path: str) -> None:
    """Write the documented detection JSON (dense masks, full float precision)."""
    records = []
    for img in images:
        if not img.detections:
            stub = {"image_id": img.image_id}
            if img.image_size is not None:
                stub["image_size"] = list(img.image_size)
            records.append(stub)
            continue
        for det in img.detections:
            rec = {
                "image_id": img.image_id,
                "class": det.class_id,
                "score": det.score,
                "bbox": [det.bbox.x0, det.bbox.y0, det.bbox.x1, det.bbox.y1],
                "mask": {
                    "h": det.mask.h,
                    "w": det.mask.w,
                    "dense": [float(v) for v in det.mask.values.ravel()],
                },
            }
            if img.image_size is not None:
                rec["image_size"] = list(img.image_size)
            records.append(rec)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=1)
        fh.write("\n")


# ── segments to instances ────────────────────────────────────────────────


def label_components(binary: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Connected components of a boolean grid via run-based union-find.

    Returns (labels, count): labels holds 0 for background and 1..count for
    components, numbered by first encounter in row-major order. Row runs are
    unioned against overlapping runs of the previous row (8-connectivity
    widens the overlap window by one pixel on each side).
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    h, w = binary.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent: list[int] = []

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    pad = 1 if connectivity == 8 else 0
    all_runs: list[tuple[int, int, int, int]] = []  # (row, start, end, run_id)
    prev: list[tuple[int, int, int]] = []  # (start, end, run_id)
    grid = binary.astype(np.int8)
    for y in range(h):
        edges = np.flatnonzero(np.diff(np.concatenate([[0], grid[y], [0]])))
        cur: list[tuple[int, int, int]] = []
        for s, e in edges.reshape(-1, 2):
            rid = len(parent)
            parent.append(rid)
            for ps, pe, pid in prev:
                if ps < e + pad and s - pad < pe:
                    union(rid, pid)
            cur.append((int(s), int(e), rid))
            all_runs.append((y, int(s), int(e), rid))
        prev = cur

    compact: dict[int, int] = {}
    for y, s, e, rid in all_runs:
        root = find(rid)
        if root not in compact:
            compact[root] = len(compact) + 1
        labels[y, s:e] = compact[root]
    return labels, len(compact)


def area_average_resample(src: np.ndarray, out_dims: tuple[int, int]) -> np.ndarray:
    """Box-filter resample: each output cell takes the exact mean of the
    source region it covers (fractional overlaps weighted by covered area).

    Implemented with a summed-area table evaluated at fractional coordinates;
    for piecewise-constant rasters the interpolated integral is exact.
    """
    src = np.asarray(src, dtype=np.float64)
    sh, sw = src.shape
    oh, ow = out_dims
    sat = np.zeros((sh + 1, sw + 1))
    sat[1:, 1:] = src.cumsum(axis=0).cumsum(axis=1)

    def integral(ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
        # bilinear read of the integral surface at fractional grid coords
        y0 = np.minimum(np.floor(ys).astype(np.int64), sh - 1)
        x0 = np.minimum(np.floor(xs).astype(np.int64), sw - 1)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        s00 = sat[np.ix_(y0, x0)]
        s01 = sat[np.ix_(y0, x0 + 1)]
        s10 = sat[np.ix_(y0 + 1, x0)]
        s11 = sat[np.ix_(y0 + 1, x0 + 1)]
        return (
            (1.0 - fy) * (1.0 - fx) * s00
            + (1.0 - fy) * fx * s01
            + fy * (1.0 - fx) * s10
            + fy * fx * s11
        )

    ys = np.linspace(0.0, sh, oh + 1)
    xs = np.linspace(0.0, sw, ow + 1)
    grid = integral(ys, xs)
    cell = grid[1:, 1:] - grid[:-1, 1:] - grid[1:, :-1] + grid[:-1, :-1]
    area = (sh / oh) * (sw / ow)
    return np.clip(cell / area, 0.0, 1.0).astype(np.float32)


def segments_to_instances(
    gt: LabelMap,
    mask_dims: tuple[int, int] | None = (28, 28),
    min_area: int = 16,
) -> list[Detection]:
    """Turn each connected component of each class into a pseudo-detection.

    Components (8-connectivity) with area >= min_area become Detections with
    score 1.0, the component's tight box as continuous corners, and its
    binary raster area-averaged to mask_dims (None keeps native resolution).
    Ordering is classes ascending, then first encounter in row-major order;
    ordinals run 0..N-1 over the result.
    """
    out: list[Detection] = []
    for c in range(gt.num_classes):
        binary = gt.values == c
        if not binary.any():
            continue
        labels, count = label_components(binary, connectivity=8)
        for comp in range(1, count + 1):
            ys, xs = np.nonzero(labels == comp)
            if ys.size < min_area:
                continue
            y0, y1 = int(ys.min()), int(ys.max()) + 1
            x0, x1 = int(xs.min()), int(xs.max()) + 1
            raster = (labels[y0:y1, x0:x1] == comp).astype(np.float64)
            mask = (
                raster.astype(np.float32)
                if mask_dims is None
                else area_average_resample(raster, mask_dims)
            )
            out.append(
                Detection(
                    class_id=c,
                    score=1.0,
                    bbox=BBox(float(x0), float(y0), float(x1), float(y1)),
                    mask=InstanceMask(mask),
                    index=len(out),
                )
            )
    return out
