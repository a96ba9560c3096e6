/**
 * autograd.ts — a minimal reverse-mode tape showing how the projection
 * kernel plugs into a host autograd system.
 *
 * The pattern every host framework needs is the same three steps the
 * `impProject` function below performs:
 *
 *   1. forward: call `boundForward` in "f64" precision (the smooth,
 *      rounding-free path) and keep the returned provenance handle;
 *   2. backward: feed the upstream canvas gradient to `boundBackward`
 *      with that handle, obtaining score and mask gradients;
 *   3. cleanup: `release()` the handle once the gradient has flowed —
 *      it retains forward buffers and must not outlive the step.
 *
 * Boxes and class ids are non-differentiable inputs; the kernel is
 * piecewise-smooth in scores and mask values away from argmax ties, which
 * is why the numeric gradient checker skips tie-proximal coordinates.
 */

import {
  boundBackward,
  boundForward,
  canvasCells,
  type ForwardInputs,
} from "./kernel.js";

// ── tape ────────────────────────────────────────────────────────────────

/** A leaf or intermediate value: float64 data plus an accumulated grad. */
export class Tensor {
  readonly data: Float64Array;
  readonly grad: Float64Array;

  constructor(data: Float64Array | number[]) {
    this.data = data instanceof Float64Array ? data : Float64Array.from(data);
    this.grad = new Float64Array(this.data.length);
  }

  get length(): number {
    return this.data.length;
  }
}

type BackwardFn = () => void;

/** Records operations in execution order; backward replays them reversed. */
export class Tape {
  private readonly steps: BackwardFn[] = [];

  record(step: BackwardFn): void {
    this.steps.push(step);
  }

  /** Seed `output.grad` with ones (scalar convention) and backpropagate. */
  backward(output: Tensor): void {
    output.grad.fill(1);
    for (let i = this.steps.length - 1; i >= 0; i--) {
      this.steps[i]();
    }
  }
}

// ── ops ─────────────────────────────────────────────────────────────────

/** Differentiable projection: (scores, masks) -> canvas. */
export function impProject(
  tape: Tape,
  scores: Tensor,
  masks: Tensor,
  fixed: Omit<ForwardInputs, "scores" | "masks" | "precision">,
): Tensor {
  const { canvas, handle } = boundForward({
    ...fixed,
    scores: scores.data,
    masks: masks.data,
    precision: "f64",
  });
  const out = new Tensor(canvas as Float64Array);
  tape.record(() => {
    const { dScores, dMasks } = boundBackward(out.grad, handle);
    handle.release();
    for (let i = 0; i < dScores.length; i++) scores.grad[i] += dScores[i];
    for (let i = 0; i < dMasks.length; i++) masks.grad[i] += dMasks[i];
  });
  return out;
}

/** Scalar loss: dot(a, weights) with fixed weights. */
export function dot(tape: Tape, a: Tensor, weights: Float64Array): Tensor {
  if (a.length !== weights.length) {
    throw new RangeError(`dot: ${a.length} values vs ${weights.length} weights`);
  }
  let acc = 0;
  for (let i = 0; i < a.length; i++) acc += a.data[i] * weights[i];
  const out = new Tensor([acc]);
  tape.record(() => {
    const g = out.grad[0];
    for (let i = 0; i < a.length; i++) a.grad[i] += g * weights[i];
  });
  return out;
}

// ── numeric gradient check ──────────────────────────────────────────────

export interface GradcheckOptions {
  /** Central-difference step (default 1e-3). */
  readonly step?: number;
  /** Max relative error tolerated (default 1e-4). */
  readonly tol?: number;
  /** Relative-error denominator floor (default 1e-2). */
  readonly denomFloor?: number;
}

export interface GradcheckReport {
  readonly passed: boolean;
  readonly maxRelError: number;
  /** Coordinate index (into the flattened parameter vector) of the max. */
  readonly worstIndex: number;
  readonly checked: number;
}

/**
 * Compare analytic grads against central differences for a scalar-valued
 * `loss` over one flat parameter vector. `analytic` must already hold the
 * backward result for the unperturbed parameters.
 */
export function numericGradcheck(
  params: Float64Array,
  analytic: Float64Array,
  loss: (p: Float64Array) => number,
  options: GradcheckOptions = {},
): GradcheckReport {
  const step = options.step ?? 1e-3;
  const tol = options.tol ?? 1e-4;
  const floor = options.denomFloor ?? 1e-2;
  if (!(step > 0)) throw new RangeError(`step must be positive, got ${step}`);

  let maxRel = 0;
  let worst = -1;
  for (let i = 0; i < params.length; i++) {
    const saved = params[i];
    params[i] = saved + step;
    const up = loss(params);
    params[i] = saved - step;
    const down = loss(params);
    params[i] = saved;
    const numeric = (up - down) / (2 * step);
    const denom = Math.max(Math.abs(numeric), Math.abs(analytic[i]), floor);
    const rel = Math.abs(numeric - analytic[i]) / denom;
    if (rel > maxRel) {
      maxRel = rel;
      worst = i;
    }
  }
  return {
    passed: maxRel <= tol,
    maxRelError: maxRel,
    worstIndex: worst,
    checked: params.length,
  };
}

/** Convenience: canvas size for sizing loss weights. */
export function canvasSize(fixed: Pick<ForwardInputs, "spec">): number {
  const { hc, wc } = canvasCells(fixed.spec);
  return fixed.spec.numClasses * hc * wc;
}
