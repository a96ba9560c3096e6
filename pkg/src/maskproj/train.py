"""Differentiable glue around the projection kernel: channel concatenation,
hard-bootstrapped cross-entropy, and a finite-difference gradient checker.

The canonical checked program is
    bootstrapped_ce ∘ linear_readout ∘ concat_canvas ∘ forward
with gradients flowing back to detection scores and mask values. It runs on
the float64 kernel path: the float32 storage rounding of the production
forward (~2^-24 per value) would swamp a 1e-4 relative tolerance at step
1e-3, so finite differences are only meaningful against unrounded math.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fixtures import gradcheck_instance
from .projection import backward_arrays, detections_to_arrays, forward_arrays
from .types import Canvas, CanvasSpec, LabelMap, LabelOutOfRange, MaskProjError, ShapeMismatch


class NoValidPixels(MaskProjError):
    """Every target pixel is IGNORE; a mean loss is undefined."""


class NonFiniteValue(MaskProjError):
    """A forward evaluation produced NaN or infinity."""


# ── concatenation ────────────────────────────────────────────────────────


def concat_canvas(features: np.ndarray, canvas: Canvas) -> np.ndarray:
    """Channel-wise concatenation, features first, canvas channels after."""
    if features.ndim != 3 or features.shape[1:] != canvas.values.shape[1:]:
        raise ShapeMismatch(
            f"features shape {features.shape} does not spatially match "
            f"canvas {canvas.values.shape}"
        )
    return np.concatenate([features, canvas.values], axis=0)


def split_concat_grad(grad: np.ndarray, num_features: int) -> tuple[np.ndarray, np.ndarray]:
    """Backward of concat_canvas: partition the upstream gradient by channel."""
    if grad.ndim != 3 or grad.shape[0] < num_features:
        raise ShapeMismatch(f"gradient shape {grad.shape} too small for {num_features} features")
    return grad[:num_features], grad[num_features:]


# ── bootstrapped cross-entropy ───────────────────────────────────────────


@dataclass
class BootstrappedLoss:
    """Loss plus the pieces needed for backward and for frozen-selection
    finite differences."""

    loss: float
    grad_logits: np.ndarray  # same shape as logits, float64
    kept: np.ndarray  # (H, W) bool, the pixels the loss averaged over


def bootstrapped_ce(
    logits: np.ndarray,
    target: LabelMap,
    keep_fraction: float,
    kept: np.ndarray | None = None,
) -> BootstrappedLoss:
    """Hard-bootstrapped softmax cross-entropy over the hardest pixels.

    Keeps the k = ceil(keep_fraction * valid_pixels) highest-loss valid
    pixels (ties by lowest flat index), averaging only over them; the
    gradient is (softmax - onehot) / k on kept pixels, zero elsewhere.
    Passing `kept` pins the selection, which finite-difference checks need
    because the selection itself is not differentiable.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    cprime = logits.shape[0]
    if cprime < 2:
        raise ValueError(f"need at least 2 logit channels, got {cprime}")
    if logits.shape[1:] != target.values.shape:
        raise ShapeMismatch(f"logits spatial {logits.shape[1:]} != target {target.values.shape}")

    valid = target.values != target.ignore_value
    if not valid.any():
        raise NoValidPixels("all target pixels are IGNORE")
    if int(target.values[valid].max()) >= cprime:
        raise LabelOutOfRange(
            f"target label {int(target.values[valid].max())} >= {cprime} logit channels"
        )

    z = logits.astype(np.float64)
    m = z.max(axis=0)
    lse = m + np.log(np.exp(z - m[None]).sum(axis=0))
    picked = np.take_along_axis(z, target.values[None].clip(0, cprime - 1), axis=0)[0]
    losses = lse - picked  # (H, W)

    if kept is None:
        flat_losses = losses[valid]
        k = math.ceil(keep_fraction * flat_losses.size)
        order = np.argsort(-flat_losses, kind="stable")  # ties -> lowest flat index
        kept = np.zeros(target.values.shape, dtype=bool)
        valid_flat = np.flatnonzero(valid.ravel())
        kept.ravel()[valid_flat[order[:k]]] = True
    else:
        if kept.shape != target.values.shape:
            raise ShapeMismatch(f"kept shape {kept.shape} != {target.values.shape}")
        k = int(kept.sum())
        if k == 0:
            raise NoValidPixels("pinned kept set is empty")

    loss = float(losses[kept].sum() / k)
    softmax = np.exp(z - lse[None])
    onehot = np.zeros_like(z)
    np.put_along_axis(onehot, target.values[None].clip(0, cprime - 1), 1.0, axis=0)
    grad = np.where(kept[None], (softmax - onehot) / k, 0.0)
    return BootstrappedLoss(loss=loss, grad_logits=grad, kept=kept)


# ── gradient check harness ───────────────────────────────────────────────


@dataclass
class GradCheckReport:
    """Finite-difference comparison summary for one program."""

    step: float
    tolerance: float
    max_rel_error: float
    n_checked: int
    n_excluded: int
    passed: bool
    per_tensor: dict = field(default_factory=dict)  # tensor -> max rel error
    worst: list = field(default_factory=list)  # top offenders
    tie_proximal: list = field(default_factory=list)  # excluded coordinates

    def to_json(self) -> dict:
        return asdict(self)


def gradcheck(
    loss_fn,
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    step: float = 1e-3,
    tolerance: float = 1e-4,
    exclude: dict[str, np.ndarray] | None = None,
    denom_floor: float = 1e-2,
    max_worst: int = 5,
) -> GradCheckReport:
    """Central finite differences of loss_fn over every parameter coordinate.

    params are float64 arrays perturbed in place (and restored); analytic
    holds matching gradient arrays. Coordinates flagged in `exclude` are
    skipped and reported as tie-proximal: near a max tie the loss is not
    differentiable and finite differences are meaningless there. The relative
    error denominator is floored (|a|, |fd|, denom_floor) so coordinates with
    near-zero true gradient are judged on absolute error at the floor's scale.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    exclude = exclude or {}
    report = GradCheckReport(
        step=step, tolerance=tolerance, max_rel_error=0.0, n_checked=0, n_excluded=0, passed=True
    )
    offenders: list[tuple[float, dict]] = []
    for name, p in params.items():
        a = analytic[name]
        if a.shape != p.shape:
            raise ShapeMismatch(f"analytic[{name}] shape {a.shape} != param {p.shape}")
        excl = exclude.get(name)
        worst_t = 0.0
        for i in range(p.size):
            coord = tuple(int(v) for v in np.unravel_index(i, p.shape))
            if excl is not None and excl[coord]:
                report.n_excluded += 1
                report.tie_proximal.append({"tensor": name, "coord": coord})
                continue
            orig = float(p[coord])
            p[coord] = orig + step
            lp = loss_fn()
            p[coord] = orig - step
            lm = loss_fn()
            p[coord] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NonFiniteValue(f"non-finite loss while perturbing {name}{coord}")
            fd = (lp - lm) / (2.0 * step)
            an = float(a[coord])
            rel = abs(an - fd) / max(abs(an), abs(fd), denom_floor)
            report.n_checked += 1
            worst_t = max(worst_t, rel)
            if rel > tolerance:
                offenders.append(
                    (rel, {"tensor": name, "coord": coord, "analytic": an, "fd": fd, "rel": rel})
                )
        report.per_tensor[name] = worst_t
        report.max_rel_error = max(report.max_rel_error, worst_t)
    offenders.sort(key=lambda t: -t[0])
    report.worst = [o for _, o in offenders[:max_worst]]
    report.passed = report.max_rel_error <= tolerance
    return report


# ── the canonical checked program ────────────────────────────────────────


@dataclass
class PipelineProgram:
    """Differentiable projection pipeline with score/mask leaf parameters.

    Holds everything fixed except the detection scores and mask grids; the
    kept set of the bootstrapped loss is pinned at construction so the
    objective stays smooth under finite perturbation.
    """

    spec: CanvasSpec
    boxes: np.ndarray
    class_ids: np.ndarray
    ordinals: np.ndarray
    scores: np.ndarray  # (N,) float64 leaf
    masks: list[np.ndarray]  # (h, w) float64 leaves
    features: np.ndarray  # (F, Hc, Wc) float64, fixed
    readout: np.ndarray  # (C', F + C) float64, fixed
    target: LabelMap  # (Hc, Wc)
    keep_fraction: float
    kept: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kept is None:
            self.kept = self._evaluate()[0].kept

    def _evaluate(self):
        vals, prov = forward_arrays(
            self.boxes, self.scores, self.class_ids, self.masks, self.ordinals,
            self.spec, dtype=np.float64,
        )
        if not np.isfinite(vals).all():
            raise NonFiniteValue("projection produced non-finite canvas values")
        stacked = concat_canvas(self.features, Canvas(spec=self.spec, values=vals))
        logits = np.tensordot(self.readout, stacked, axes=([1], [0]))
        res = bootstrapped_ce(logits, self.target, self.keep_fraction, kept=self.kept)
        return res, prov, stacked

    def loss(self) -> float:
        return self._evaluate()[0].loss

    def analytic_grads(self) -> dict[str, np.ndarray]:
        res, prov, _ = self._evaluate()
        d_stacked = np.tensordot(self.readout, res.grad_logits, axes=([0], [0]))
        _, d_canvas = split_concat_grad(d_stacked, self.features.shape[0])
        d_scores, d_masks = backward_arrays(d_canvas, prov, self.scores, self.masks, self.ordinals)
        out = {"scores": d_scores}
        for i, dm in enumerate(d_masks):
            out[f"mask_{i}"] = dm
        return out

    def params(self) -> dict[str, np.ndarray]:
        out = {"scores": self.scores}
        for i, m in enumerate(self.masks):
            out[f"mask_{i}"] = m
        return out

    def tie_exclusions(self, step: float, margin: float = 4.0) -> dict[str, np.ndarray]:
        """Coordinates whose perturbation by ±step could flip a max winner.

        A canvas cell is tie-proximal when the gap between adjacent competing
        contributions there (including the 0 no-update baseline) is within
        margin * step. Every covering detection's score, and the four mask
        corners it samples at such a cell, are excluded.
        """
        thresh = margin * step
        hc, wc = self.spec.canvas_height, self.spec.canvas_width
        n = len(self.scores)
        contribs = np.full((n, hc, wc), np.inf)
        cover = np.zeros((n, hc, wc), dtype=bool)
        samples = []
        for k in range(n):
            sub = self.spec
            one = [np.ones_like(self.masks[k])]
            _, cov_prov = forward_arrays(
                self.boxes[k : k + 1], np.ones(1), np.zeros(1, dtype=np.int64), one,
                np.zeros(1, dtype=np.int64),
                CanvasSpec(num_classes=1, height=sub.height, width=sub.width, scale=sub.scale),
                dtype=np.float64,
            )
            cov = cov_prov.winner[0] == 0
            vals, _ = forward_arrays(
                self.boxes[k : k + 1], self.scores[k : k + 1],
                np.zeros(1, dtype=np.int64), [self.masks[k]], np.zeros(1, dtype=np.int64),
                CanvasSpec(num_classes=1, height=sub.height, width=sub.width, scale=sub.scale),
                dtype=np.float64,
            )
            cover[k] = cov
            contribs[k][cov] = vals[0][cov]
            samples.append((cov_prov.v0[0], cov_prov.u0[0]))

        tie_cell = np.zeros((self.spec.num_classes, hc, wc), dtype=bool)
        for c in range(self.spec.num_classes):
            members = np.flatnonzero(self.class_ids == c)
            if members.size == 0:
                continue
            stack = np.concatenate([np.zeros((1, hc, wc)), contribs[members]])
            stack = np.sort(stack, axis=0)
            with np.errstate(invalid="ignore"):
                diffs = np.diff(stack, axis=0)
            diffs = np.where(np.isfinite(diffs), diffs, np.inf)
            tie_cell[c] = diffs.min(axis=0) <= thresh

        out = {"scores": np.zeros(n, dtype=bool)}
        for k in range(n):
            h, w = self.masks[k].shape
            excl = np.zeros((h, w), dtype=bool)
            cells = cover[k] & tie_cell[self.class_ids[k]]
            if cells.any():
                out["scores"][k] = True
                v0 = samples[k][0][cells].astype(np.int64)
                u0 = samples[k][1][cells].astype(np.int64)
                v1 = np.minimum(v0 + 1, h - 1)
                u1 = np.minimum(u0 + 1, w - 1)
                excl[v0, u0] = True
                excl[v0, u1] = True
                excl[v1, u0] = True
                excl[v1, u1] = True
            out[f"mask_{k}"] = excl
        return out


def build_pipeline_program(
    seed: int,
    keep_fraction: float = 0.25,
    num_features: int = 2,
    canvas_dims: tuple[int, int] | None = None,
    n_detections: int | None = None,
) -> PipelineProgram:
    """Seeded instance of the canonical program over a small random scene."""
    dets, spec = gradcheck_instance(seed, canvas_dims=canvas_dims, n_detections=n_detections)
    boxes, scores, class_ids, masks, ordinals = detections_to_arrays(dets)
    rng = np.random.default_rng(seed + 99_991)
    hc, wc = spec.canvas_height, spec.canvas_width
    cprime = spec.num_classes + 1
    features = rng.normal(0.0, 0.5, size=(num_features, hc, wc))
    readout = rng.normal(0.0, 0.5, size=(cprime, num_features + spec.num_classes))
    target_vals = rng.integers(0, cprime, size=(hc, wc)).astype(np.int32)
    ignore = rng.uniform(size=(hc, wc)) < 0.05
    target_vals[ignore] = 255
    target = LabelMap(values=target_vals, num_classes=spec.num_classes, ignore_value=255)
    return PipelineProgram(
        spec=spec,
        boxes=boxes,
        class_ids=class_ids,
        ordinals=ordinals,
        scores=scores,
        masks=masks,
        features=features,
        readout=readout,
        target=target,
        keep_fraction=keep_fraction,
    )


def gradcheck_pipeline(
    seed: int,
    step: float = 1e-3,
    tolerance: float = 1e-4,
    keep_fraction: float = 0.25,
    canvas_dims: tuple[int, int] | None = None,
    n_detections: int | None = None,
) -> GradCheckReport:
    """Build the canonical seeded program, exclude tie-proximal coordinates,
    and finite-difference every remaining score/mask coordinate."""
    prog = build_pipeline_program(
        seed,
        keep_fraction=keep_fraction,
        canvas_dims=canvas_dims,
        n_detections=n_detections,
    )
    return gradcheck(
        prog.loss,
        prog.params(),
        prog.analytic_grads(),
        step=step,
        tolerance=tolerance,
        exclude=prog.tie_exclusions(step),
    )
