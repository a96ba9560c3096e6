"""Command-line surface: projection, evaluation, ground-truth conversion,
gradient checking, benchmarking, and cross-implementation fixture dumps.

Every command is deterministic for a fixed --seed; reports are emitted with
sorted keys and no timestamps, so repeated runs are byte-identical. Exit
codes: 0 success, 1 evaluation/gradcheck failure, 2 input error (with a
machine-readable error JSON on stderr).
"""
from __future__ import annotations

import argparse
import base64
import json
import math
import os
import struct
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .boundary import DEFAULT_THRESHOLDS, accumulate_within, boundary_pixels, distance_transform
from .fixtures import bench_instance, random_instance
from .io import (
    DatasetConfig,
    ImageDetections,
    MissingPair,
    ParseError,
    load_dataset_config,
    load_detections,
    load_labelmap,
    save_detections,
    save_labelmap,
    segments_to_instances,
)
from .metrics import ConfusionMatrix, accumulate, acc_per_class, iou_per_class, macc, merge, miou
from .projection import detections_to_arrays, forward_arrays, imp_backward, imp_forward
from .semantic import project_to_semantic
from .train import gradcheck_pipeline
from .types import Canvas, CanvasSpec, MaskProjError

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2

_CANVAS_MAGIC = struct.Struct("<3I")


def write_canvas_dump(canvas: Canvas, path: str) -> None:
    """Binary canvas dump: uint32 LE header (C, Hc, Wc), then row-major
    float32 LE values."""
    vals = canvas.values.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_CANVAS_MAGIC.pack(*vals.shape))
        fh.write(vals.tobytes())


def read_canvas_dump(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        c, hc, wc = _CANVAS_MAGIC.unpack(fh.read(_CANVAS_MAGIC.size))
        vals = np.frombuffer(fh.read(), dtype="<f4")
    if vals.size != c * hc * wc:
        raise ParseError(f"{path}: canvas payload has {vals.size} values, header says {c * hc * wc}")
    return vals.reshape(c, hc, wc)


def _jobs_default() -> int:
    try:
        return max(1, int(os.environ.get("IMP_JOBS", "1")))
    except ValueError:
        return 1


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _nan_to_none(x: float):
    return None if (isinstance(x, float) and math.isnan(x)) else x


def _dump_json(payload: dict, path: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _b64(arr: np.ndarray, dtype: str) -> str:
    return base64.b64encode(np.ascontiguousarray(arr.astype(dtype)).tobytes()).decode("ascii")


def _parse_dims(text: str | None) -> tuple[int, int] | None:
    """Parse 'HxW' into a (height, width) pair."""
    if text is None:
        return None
    try:
        h, w = (int(v) for v in text.lower().split("x"))
        if h <= 0 or w <= 0:
            raise ValueError
        return h, w
    except ValueError:
        raise ParseError(f"--canvas expects HxW with positive integers, got {text!r}") from None


# ── project ──────────────────────────────────────────────────────────────


def _image_spec(img: ImageDetections, config: DatasetConfig, scale: int) -> CanvasSpec:
    size = img.image_size or config.image_size
    if size is None:
        raise ParseError(
            f"image {img.image_id!r}: no image_size in the detection file or config"
        )
    return CanvasSpec(num_classes=config.num_classes, height=size[0], width=size[1], scale=scale)


def cmd_project(args: argparse.Namespace) -> int:
    config = load_dataset_config(args.config)
    scale = args.scale if args.scale is not None else config.scale
    images = load_detections(args.detections, config)
    os.makedirs(args.out_dir, exist_ok=True)

    def run(image_id: str) -> None:
        img = images[image_id]
        spec = _image_spec(img, config, scale)
        labels = project_to_semantic(
            img.detections, spec, tau=args.tau,
            ignore_value=config.ignore_value, upsample=args.upsample,
        )
        save_labelmap(labels, os.path.join(args.out_dir, f"{image_id}.png"))
        if args.emit_canvas:
            canvas, _ = imp_forward(img.detections, spec)
            write_canvas_dump(canvas, os.path.join(args.out_dir, f"{image_id}.canvas"))

    _parallel_map(run, sorted(images), args.jobs)
    return EXIT_OK


# ── eval ─────────────────────────────────────────────────────────────────


def _pair_files(pred_dir: str, gt_dir: str) -> list[tuple[str, str, str]]:
    gts = sorted(f for f in os.listdir(gt_dir) if f.endswith(".png"))
    if not gts:
        raise MissingPair(f"no .png ground-truth files in {gt_dir}")
    pairs = []
    for name in gts:
        pred = os.path.join(pred_dir, name)
        if not os.path.exists(pred):
            raise MissingPair(f"no prediction for {name} in {pred_dir}")
        pairs.append((os.path.splitext(name)[0], pred, os.path.join(gt_dir, name)))
    return pairs


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_dataset_config(args.config)
    pairs = _pair_files(args.pred_dir, args.gt_dir)
    thresholds = (
        [float(t) for t in args.boundary_thresholds.split(",")]
        if args.boundary_thresholds
        else list(DEFAULT_THRESHOLDS)
    )

    def run(pair: tuple[str, str, str]):
        _, pred_path, gt_path = pair
        pred = load_labelmap(pred_path, config)
        gt = load_labelmap(gt_path, config)
        cm = accumulate(ConfusionMatrix(config.num_classes), pred, gt)
        by_d = None
        if args.boundary_csv:
            dist = distance_transform(boundary_pixels(gt))
            by_d = [
                accumulate_within(ConfusionMatrix(config.num_classes), pred, gt, dist, d)
                for d in thresholds
            ]
        return cm, by_d

    results = _parallel_map(run, pairs, args.jobs)
    total = ConfusionMatrix(config.num_classes)
    for cm, _ in results:
        total = merge(total, cm)

    incl = config.include_background
    iou = iou_per_class(total)
    acc = acc_per_class(total)
    per_class = []
    for c, name in enumerate([*config.class_names, "background"]):
        per_class.append(
            {
                "class": name,
                "iou": _nan_to_none(float(iou[c])),
                "acc": _nan_to_none(float(acc[c])),
                "gt_pixels": int(total.counts[c].sum()),
            }
        )
    report = {
        "config": {
            "class_names": list(config.class_names),
            "num_classes": config.num_classes,
            "include_background": incl,
            "ignore_value": config.ignore_value,
        },
        "num_images": len(pairs),
        "pixels": total.total,
        "per_class": per_class,
        "miou": _nan_to_none(miou(total, incl)),
        "macc": _nan_to_none(macc(total, incl)),
    }
    _dump_json(report, args.report)

    if args.csv:
        lines = ["class,iou,acc"]
        for row in per_class:
            lines.append(
                f"{row['class']},{'' if row['iou'] is None else repr(row['iou'])},"
                f"{'' if row['acc'] is None else repr(row['acc'])}"
            )
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    if args.boundary_csv:
        curves = [ConfusionMatrix(config.num_classes) for _ in thresholds]
        for _, by_d in results:
            for i, cm in enumerate(by_d):
                curves[i] = merge(curves[i], cm)
        lines = ["d,miou"]
        for d, cm in zip(thresholds, curves):
            v = miou(cm, incl)
            lines.append(f"{d:g},{'' if math.isnan(v) else repr(v)}")
        with open(args.boundary_csv, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


# ── convert-gt ───────────────────────────────────────────────────────────


def cmd_convert_gt(args: argparse.Namespace) -> int:
    config = load_dataset_config(args.config)
    names = sorted(f for f in os.listdir(args.gt_dir) if f.endswith(".png"))
    mask_dims = None if args.native_masks else (args.mask_height or config.mask_dims[0],
                                                args.mask_width or config.mask_dims[1])

    def run(name: str) -> ImageDetections:
        gt = load_labelmap(os.path.join(args.gt_dir, name), config)
        dets = segments_to_instances(gt, mask_dims=mask_dims, min_area=args.min_area)
        return ImageDetections(
            image_id=os.path.splitext(name)[0],
            detections=dets,
            image_size=gt.shape,
        )

    images = _parallel_map(run, names, args.jobs)
    save_detections(images, args.out)
    return EXIT_OK


# ── gradcheck ────────────────────────────────────────────────────────────


def cmd_gradcheck(args: argparse.Namespace) -> int:
    canvas_dims = _parse_dims(args.canvas)
    reports = []
    all_passed = True
    for seed in range(args.seed, args.seed + args.instances):
        rep = gradcheck_pipeline(seed, step=args.step, tolerance=args.tol,
                                 keep_fraction=args.keep,
                                 canvas_dims=canvas_dims, n_detections=args.detections)
        reports.append({"seed": seed, **rep.to_json()})
        all_passed &= rep.passed
        print(
            f"seed {seed}: max_rel_error={rep.max_rel_error:.3e} "
            f"checked={rep.n_checked} tie_proximal={rep.n_excluded} "
            f"{'pass' if rep.passed else 'FAIL'}"
        )
    payload = {
        "step": args.step,
        "tolerance": args.tol,
        "keep_fraction": args.keep,
        "passed": all_passed,
        "max_rel_error": max(r["max_rel_error"] for r in reports),
        "instances": reports,
    }
    if args.report:
        _dump_json(payload, args.report)
    print(f"gradcheck: {'pass' if all_passed else 'FAIL'} "
          f"(max rel error {payload['max_rel_error']:.3e})")
    return EXIT_OK if all_passed else EXIT_FAIL


# ── bench ────────────────────────────────────────────────────────────────


def cmd_bench(args: argparse.Namespace) -> int:
    canvas_dims = _parse_dims(args.canvas)
    image_dims = (canvas_dims[0] * 4, canvas_dims[1] * 4) if canvas_dims else (1024, 2048)
    dets, spec = bench_instance(args.seed, image_dims=image_dims,
                                n_detections=args.detections)
    rng = np.random.default_rng(args.seed + 1)
    canvas, prov = imp_forward(dets, spec)  # warm-up + provenance for backward
    grad = rng.standard_normal(canvas.values.shape).astype(np.float32)

    fwd_times, bwd_times = [], []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        imp_forward(dets, spec, validate=False)
        fwd_times.append((time.perf_counter() - t0) * 1e3)
        t0 = time.perf_counter()
        imp_backward(grad, prov, dets)
        bwd_times.append((time.perf_counter() - t0) * 1e3)

    def stats(ts):
        return {
            "median_ms": float(np.median(ts)),
            "p95_ms": float(np.percentile(ts, 95)),
        }

    payload = {
        "canvas": [spec.num_classes, spec.canvas_height, spec.canvas_width],
        "detections": len(dets),
        "mask_dims": [dets[0].mask.h, dets[0].mask.w] if dets else [0, 0],
        "repeats": args.repeats,
        "forward": stats(fwd_times),
        "backward": stats(bwd_times),
    }
    print(
        f"forward: median {payload['forward']['median_ms']:.2f} ms, "
        f"p95 {payload['forward']['p95_ms']:.2f} ms | "
        f"backward: median {payload['backward']['median_ms']:.2f} ms, "
        f"p95 {payload['backward']['p95_ms']:.2f} ms"
    )
    if args.report:
        _dump_json(payload, args.report)
    return EXIT_OK


# ── fixtures ─────────────────────────────────────────────────────────────


def _fixture_payload(seed: int) -> dict:
    dets, spec = random_instance(seed)
    boxes, scores, class_ids, masks, ordinals = detections_to_arrays(dets)
    values, prov = forward_arrays(boxes, scores, class_ids, masks, ordinals, spec)
    rng = np.random.default_rng(seed + 7_777_777)
    grad = rng.standard_normal(values.shape).astype(np.float32)
    grads = imp_backward(grad, prov, dets)
    return {
        "seed": seed,
        "spec": {
            "num_classes": spec.num_classes,
            "height": spec.height,
            "width": spec.width,
            "scale": spec.scale,
        },
        "n": len(dets),
        "mask_dims": [[m.shape[0], m.shape[1]] for m in masks],
        "boxes_b64": _b64(boxes, "<f4"),
        "scores_b64": _b64(scores, "<f4"),
        "classes_b64": _b64(class_ids, "<i8"),
        "ordinals_b64": _b64(ordinals, "<i8"),
        "masks_b64": _b64(
            np.concatenate([m.ravel() for m in masks]) if masks else np.zeros(0), "<f4"
        ),
        "canvas_b64": _b64(values, "<f4"),
        "winner_b64": _b64(prov.winner, "<i4"),
        "grad_canvas_b64": _b64(grad, "<f4"),
        "d_scores_b64": _b64(np.array([g.d_score for g in grads]), "<f4"),
        "d_masks_b64": _b64(
            np.concatenate([g.d_mask.ravel() for g in grads]) if grads else np.zeros(0), "<f4"
        ),
    }


def cmd_fixtures(args: argparse.Namespace) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    for seed in range(args.seed, args.seed + args.count):
        payload = _fixture_payload(seed)
        _dump_json(payload, os.path.join(args.out_dir, f"fixture_{seed:04d}.json"))
    print(f"wrote {args.count} fixtures to {args.out_dir}")
    return EXIT_OK


# ── parser / main ────────────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="maskproj",
        description="Instance-mask projection onto per-class canvases, "
        "projection-only segmentation, and its evaluation toolkit.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("project", help="project detections to label-map PNGs")
    sp.add_argument("--detections", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--scale", type=int, default=None, help="canvas downscale (default: config)")
    sp.add_argument("--tau", type=float, default=0.5, help="background threshold")
    sp.add_argument("--upsample", choices=("nearest", "bilinear"), default="nearest")
    sp.add_argument("--emit-canvas", action="store_true", help="also write binary canvas dumps")
    sp.add_argument("--jobs", type=int, default=_jobs_default())
    sp.set_defaults(fn=cmd_project)

    se = sub.add_parser("eval", help="evaluate predicted label maps against ground truth")
    se.add_argument("--pred-dir", required=True)
    se.add_argument("--gt-dir", required=True)
    se.add_argument("--config", required=True)
    se.add_argument("--report", default=None, help="JSON report path (default: stdout)")
    se.add_argument("--csv", default=None, help="per-class CSV path")
    se.add_argument("--boundary-csv", default=None, help="(d, mIOU) curve CSV path")
    se.add_argument("--boundary-thresholds", default=None,
                    help="comma-separated distances (default 10,20,50,100,200,400)")
    se.add_argument("--jobs", type=int, default=_jobs_default())
    se.set_defaults(fn=cmd_eval)

    sc = sub.add_parser("convert-gt", help="turn label-map segments into pseudo-detections")
    sc.add_argument("--gt-dir", required=True)
    sc.add_argument("--config", required=True)
    sc.add_argument("--out", required=True)
    sc.add_argument("--mask-height", type=int, default=None)
    sc.add_argument("--mask-width", type=int, default=None)
    sc.add_argument("--native-masks", action="store_true",
                    help="keep component-resolution masks instead of resampling")
    sc.add_argument("--min-area", type=int, default=16)
    sc.add_argument("--jobs", type=int, default=_jobs_default())
    sc.set_defaults(fn=cmd_convert_gt)

    sg = sub.add_parser("gradcheck", help="finite-difference check of the training pipeline")
    sg.add_argument("--seed", type=int, default=0)
    sg.add_argument("--instances", type=int, default=1)
    sg.add_argument("--canvas", default=None, help="canvas cells as HxW (default: seeded draw)")
    sg.add_argument("--detections", type=int, default=None,
                    help="detection count (default: seeded draw)")
    sg.add_argument("--step", type=float, default=1e-3)
    sg.add_argument("--tol", type=float, default=1e-4)
    sg.add_argument("--keep", type=float, default=0.25)
    sg.add_argument("--report", default=None)
    sg.set_defaults(fn=cmd_gradcheck)

    sb = sub.add_parser("bench", help="wall-time the projection kernel")
    sb.add_argument("--seed", type=int, default=0)
    sb.add_argument("--canvas", default=None, help="canvas cells as HxW (default: 256x512)")
    sb.add_argument("--detections", type=int, default=100)
    sb.add_argument("--repeats", type=int, default=20)
    sb.add_argument("--report", default=None)
    sb.set_defaults(fn=cmd_bench)

    sf = sub.add_parser("fixtures", help="dump seeded kernel fixtures for reimplementations")
    sf.add_argument("--out-dir", required=True)
    sf.add_argument("--seed", type=int, default=0)
    sf.add_argument("--count", type=int, default=20)
    sf.set_defaults(fn=cmd_fixtures)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "step", None) is not None and args.step <= 0:
        parser.error("--step must be positive")
    if getattr(args, "tau", None) is not None and not 0.0 <= args.tau <= 1.0:
        parser.error("--tau must be in [0, 1]")
    try:
        return args.fn(args)
    except MaskProjError as e:
        sys.stderr.write(
            json.dumps({"error": type(e).__name__, "message": str(e)}, sort_keys=True) + "\n"
        )
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
