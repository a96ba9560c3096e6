/**
 * kernel.ts — score-scaled instance mask projection over flat typed arrays.
 *
 * Bit-compatible port of the native kernel. All buffers are row-major:
 * 32-bit floats for reals, 64-bit ints for class ids. The numeric
 * convention both implementations pin down:
 *
 * - canvas cell (py, px) has image-space center ((px + 0.5)*s, (py + 0.5)*s)
 * - normalized box coords u' = (x - x0) / (x1 - x0); a cell is covered iff
 *   u' and v' lie in [0, 1), half-open so abutting boxes partition cells
 * - continuous mask coords u = clamp(u'*w - 0.5, 0, w-1) (replicate
 *   border); corners u0 = floor(u), u1 = min(u0 + 1, w - 1), fu = u - u0
 * - sample = (1-fv)(1-fu)*m00 + (1-fv)fu*m01 + fv(1-fu)*m10 + fv*fu*m11,
 *   evaluated left to right in float64
 * - contribution = fround(score * sample): the one float32 rounding in the
 *   forward pass (skipped entirely in "f64" precision mode)
 * - detections fold in ascending index order with strictly-greater
 *   updates, so the lowest index wins ties and list order is irrelevant
 * - backward accumulates in float64 visiting cells in (class, row, col)
 *   order; per cell the four mask-corner contributions add in
 *   (00, 01, 10, 11) order and grad*sample joins the score sum once;
 *   results round to float32 only in "f32" mode
 *
 * The module keeps no shared mutable state: concurrent calls are
 * independent, and a provenance handle must simply not be fed to two
 * concurrent backward calls.
 */

import { ArgumentError, ShapeMismatch, StaleHandle } from "./errors.js";

/** Canvas geometry: C channels over a ceil(H/s) × ceil(W/s) cell grid. */
export interface CanvasSpec {
  readonly numClasses: number;
  readonly height: number;
  readonly width: number;
  readonly scale: number;
}

export type RealArray = Float32Array | Float64Array;

/** "f32" replays the native storage contract; "f64" is the smooth path
 * used for finite-difference work (no rounding anywhere). */
export type Precision = "f32" | "f64";

/** Mask dims: one [h, w] per detection, or a single pair shared by all. */
export type MaskDims =
  | ReadonlyArray<readonly [number, number]>
  | readonly [number, number];

export interface ForwardInputs {
  /** (n, 4) boxes as x0, y0, x1, y1 in image pixels. */
  readonly boxes: RealArray;
  /** (n,) confidence scores in [0, 1]. */
  readonly scores: RealArray;
  /** (n,) class ids in [0, numClasses). */
  readonly classes: BigInt64Array;
  /** Concatenated h*w row-major mask blocks in detection order. */
  readonly masks: RealArray;
  readonly maskDims: MaskDims;
  readonly spec: CanvasSpec;
  readonly precision?: Precision;
}

export interface ForwardResult {
  /** (C, Hc, Wc) row-major canvas values. */
  readonly canvas: RealArray;
  readonly handle: ProvenanceHandle;
}

export interface BackwardResult {
  /** (n,) gradient wrt each detection's score. */
  readonly dScores: RealArray;
  /** Concatenated h*w gradient blocks matching the input mask layout. */
  readonly dMasks: RealArray;
}

export function canvasCells(spec: CanvasSpec): { hc: number; wc: number } {
  return {
    hc: Math.ceil(spec.height / spec.scale),
    wc: Math.ceil(spec.width / spec.scale),
  };
}

function checkSpec(spec: CanvasSpec): void {
  for (const key of ["numClasses", "height", "width", "scale"] as const) {
    const v = spec[key];
    if (!Number.isInteger(v) || v <= 0) {
      throw new ArgumentError(`spec.${key} must be a positive integer, got ${v}`);
    }
  }
}

interface NormalizedInputs {
  n: number;
  dims: Array<[number, number]>;
  offsets: Int32Array; // start of each mask block in the concatenated buffer
}

function checkInputs(inputs: ForwardInputs): NormalizedInputs {
  checkSpec(inputs.spec);
  const n = inputs.scores.length;
  if (inputs.boxes.length !== n * 4) {
    throw new ArgumentError(
      `boxes buffer holds ${inputs.boxes.length} values, expected ${n * 4} for ${n} detections`,
    );
  }
  if (inputs.classes.length !== n) {
    throw new ArgumentError(
      `classes buffer holds ${inputs.classes.length} values, expected ${n}`,
    );
  }
  const md = inputs.maskDims;
  const shared = md.length === 2 && typeof md[0] === "number";
  const dims: Array<[number, number]> = [];
  for (let k = 0; k < n; k++) {
    const pair = shared
      ? (md as readonly [number, number])
      : (md as ReadonlyArray<readonly [number, number]>)[k];
    if (pair === undefined) {
      throw new ArgumentError(`maskDims lists ${md.length} pairs, expected ${n}`);
    }
    const [h, w] = pair;
    if (!Number.isInteger(h) || !Number.isInteger(w) || h <= 0 || w <= 0) {
      throw new ArgumentError(`maskDims[${k}] must be positive integers, got [${h}, ${w}]`);
    }
    dims.push([h, w]);
  }
  if (!shared && md.length !== n) {
    throw new ArgumentError(`maskDims lists ${md.length} pairs, expected ${n}`);
  }
  const offsets = new Int32Array(n);
  let total = 0;
  for (let k = 0; k < n; k++) {
    offsets[k] = total;
    total += dims[k][0] * dims[k][1];
  }
  if (inputs.masks.length !== total) {
    throw new ArgumentError(
      `masks buffer holds ${inputs.masks.length} values, expected ${total}`,
    );
  }
  for (let k = 0; k < n; k++) {
    const c = Number(inputs.classes[k]);
    if (c < 0 || c >= inputs.spec.numClasses) {
      throw new ArgumentError(
        `classes[${k}] = ${c} outside [0, ${inputs.spec.numClasses})`,
      );
    }
    const x0 = inputs.boxes[4 * k];
    const y0 = inputs.boxes[4 * k + 1];
    const x1 = inputs.boxes[4 * k + 2];
    const y1 = inputs.boxes[4 * k + 3];
    if (!(x1 > x0) || !(y1 > y0) || !Number.isFinite(x0 + y0 + x1 + y1)) {
      throw new ArgumentError(`boxes[${k}] = [${x0}, ${y0}, ${x1}, ${y1}] is degenerate`);
    }
  }
  return { n, dims, offsets };
}

/**
 * Opaque provenance: which detection won each cell and with what bilinear
 * sample. Holds references to the forward buffers it needs for backward;
 * `release()` drops them, after which any use throws `StaleHandle`.
 */
export class ProvenanceHandle {
  #released = false;

  constructor(
    readonly spec: CanvasSpec,
    private readonly precision: Precision,
    private scores: RealArray | null,
    private masks: RealArray | null,
    private readonly dims: Array<[number, number]>,
    private readonly offsets: Int32Array,
    private winner: Int32Array | null,
    private v0s: Int32Array | null,
    private u0s: Int32Array | null,
    private fvs: Float64Array | null,
    private fus: Float64Array | null,
  ) {}

  get released(): boolean {
    return this.#released;
  }

  /** Winning detection index per cell (-1 when untouched); read-only view. */
  get winners(): Int32Array {
    return this.#live().winner;
  }

  /** Drop the retained buffers. Idempotent. */
  release(): void {
    this.#released = true;
    this.scores = this.masks = this.winner = null;
    this.v0s = this.u0s = null;
    this.fvs = this.fus = null;
  }

  #live() {
    if (this.#released) {
      throw new StaleHandle("provenance handle used after release()");
    }
    return {
      scores: this.scores!,
      masks: this.masks!,
      dims: this.dims,
      offsets: this.offsets,
      winner: this.winner!,
      v0s: this.v0s!,
      u0s: this.u0s!,
      fvs: this.fvs!,
      fus: this.fus!,
      precision: this.precision,
    };
  }

  /** @internal */
  static open(handle: ProvenanceHandle) {
    return handle.#live();
  }
}

/**
 * Project n detections onto a per-class canvas under strict-greater max
 * fusion. Returns the canvas buffer and a provenance handle for backward.
 */
export function boundForward(inputs: ForwardInputs): ForwardResult {
  const { n, dims, offsets } = checkInputs(inputs);
  const { spec } = inputs;
  const precision = inputs.precision ?? "f32";
  const round = precision === "f32" ? Math.fround : (x: number) => x;
  const { hc, wc } = canvasCells(spec);
  const size = spec.numClasses * hc * wc;

  const canvas = precision === "f32" ? new Float32Array(size) : new Float64Array(size);
  const winner = new Int32Array(size).fill(-1);
  const v0s = new Int32Array(size);
  const u0s = new Int32Array(size);
  const fvs = new Float64Array(size);
  const fus = new Float64Array(size);

  const s = spec.scale;
  for (let k = 0; k < n; k++) {
    // ascending index order makes the lowest index win exact ties
    const x0 = inputs.boxes[4 * k];
    const y0 = inputs.boxes[4 * k + 1];
    const x1 = inputs.boxes[4 * k + 2];
    const y1 = inputs.boxes[4 * k + 3];
    const score = inputs.scores[k];
    const c = Number(inputs.classes[k]);
    const [mh, mw] = dims[k];
    const mOff = offsets[k];

    // conservative window; the half-open coverage test below is authoritative
    const pxLo = Math.max(0, Math.floor(x0 / s - 0.5));
    const pxHi = Math.min(wc - 1, Math.ceil(x1 / s - 0.5));
    const pyLo = Math.max(0, Math.floor(y0 / s - 0.5));
    const pyHi = Math.min(hc - 1, Math.ceil(y1 / s - 0.5));

    for (let py = pyLo; py <= pyHi; py++) {
      const vn = ((py + 0.5) * s - y0) / (y1 - y0);
      if (!(vn >= 0 && vn < 1)) continue;
      const v = Math.min(Math.max(vn * mh - 0.5, 0), mh - 1);
      const v0 = Math.floor(v);
      const v1 = Math.min(v0 + 1, mh - 1);
      const fv = v - v0;
      for (let px = pxLo; px <= pxHi; px++) {
        const un = ((px + 0.5) * s - x0) / (x1 - x0);
        if (!(un >= 0 && un < 1)) continue;
        const u = Math.min(Math.max(un * mw - 0.5, 0), mw - 1);
        const u0 = Math.floor(u);
        const u1 = Math.min(u0 + 1, mw - 1);
        const fu = u - u0;

        const m00 = inputs.masks[mOff + v0 * mw + u0];
        const m01 = inputs.masks[mOff + v0 * mw + u1];
        const m10 = inputs.masks[mOff + v1 * mw + u0];
        const m11 = inputs.masks[mOff + v1 * mw + u1];
        const sample =
          (1 - fv) * (1 - fu) * m00 +
          (1 - fv) * fu * m01 +
          fv * (1 - fu) * m10 +
          fv * fu * m11;
        const contrib = round(score * sample);

        const idx = (c * hc + py) * wc + px;
        if (contrib > canvas[idx]) {
          canvas[idx] = contrib;
          winner[idx] = k;
          v0s[idx] = v0;
          u0s[idx] = u0;
          fvs[idx] = fv;
          fus[idx] = fu;
        }
      }
    }
  }

  const handle = new ProvenanceHandle(
    spec, precision, inputs.scores, inputs.masks, dims, offsets,
    winner, v0s, u0s, fvs, fus,
  );
  return { canvas, handle };
}

export interface BackwardOptions {
  /** Leave dScores at zero (mask-only gradients). */
  readonly freezeScores?: boolean;
}

/**
 * Route a canvas gradient to each winning detection's score and mask.
 * The handle stays reusable until `release()`.
 */
export function boundBackward(
  gradCanvas: RealArray,
  handle: ProvenanceHandle,
  options: BackwardOptions = {},
): BackwardResult {
  const p = ProvenanceHandle.open(handle);
  const { hc, wc } = canvasCells(handle.spec);
  const size = handle.spec.numClasses * hc * wc;
  if (gradCanvas.length !== size) {
    throw new ShapeMismatch(
      `gradCanvas holds ${gradCanvas.length} values, expected ${size}`,
    );
  }
  const n = p.scores.length;
  const freeze = options.freezeScores ?? false;

  const dScores64 = new Float64Array(n);
  const totalMask = p.masks.length;
  const dMasks64 = new Float64Array(totalMask);

  for (let k = 0; k < n; k++) {
    const [mh, mw] = p.dims[k];
    const mOff = p.offsets[k];
    const score = p.scores[k];
    let acc = 0;
    for (let idx = 0; idx < size; idx++) {
      // flat index order = (class, row, col): the pinned accumulation order
      if (p.winner[idx] !== k) continue;
      const g = gradCanvas[idx];
      const v0 = p.v0s[idx];
      const u0 = p.u0s[idx];
      const fv = p.fvs[idx];
      const fu = p.fus[idx];
      const v1 = Math.min(v0 + 1, mh - 1);
      const u1 = Math.min(u0 + 1, mw - 1);
      const w00 = (1 - fv) * (1 - fu);
      const w01 = (1 - fv) * fu;
      const w10 = fv * (1 - fu);
      const w11 = fv * fu;

      if (!freeze) {
        const sample =
          w00 * p.masks[mOff + v0 * mw + u0] +
          w01 * p.masks[mOff + v0 * mw + u1] +
          w10 * p.masks[mOff + v1 * mw + u0] +
          w11 * p.masks[mOff + v1 * mw + u1];
        acc += g * sample;
      }
      const gs = g * score;
      dMasks64[mOff + v0 * mw + u0] += gs * w00;
      dMasks64[mOff + v0 * mw + u1] += gs * w01;
      dMasks64[mOff + v1 * mw + u0] += gs * w10;
      dMasks64[mOff + v1 * mw + u1] += gs * w11;
    }
    dScores64[k] = acc;
  }

  if (p.precision === "f64") {
    return { dScores: dScores64, dMasks: dMasks64 };
  }
  return {
    dScores: Float32Array.from(dScores64, Math.fround),
    dMasks: Float32Array.from(dMasks64, Math.fround),
  };
}

/**
 * Projection-only segmentation: forward, per-cell argmax against a
 * background threshold tau, nearest-neighbor upsample to image size.
 * Returns (H, W) labels with numClasses meaning background.
 */
export function projectToSemantic(inputs: ForwardInputs, tau: number): Int32Array {
  if (!(tau >= 0 && tau <= 1)) {
    throw new ArgumentError(`tau must be in [0, 1], got ${tau}`);
  }
  const { spec } = inputs;
  const { canvas, handle } = boundForward(inputs);
  handle.release();
  const { hc, wc } = canvasCells(spec);

  const cells = new Int32Array(hc * wc);
  for (let cell = 0; cell < hc * wc; cell++) {
    let best = 0;
    let top = canvas[cell];
    for (let c = 1; c < spec.numClasses; c++) {
      const v = canvas[c * hc * wc + cell];
      if (v > top) {
        top = v;
        best = c; // strictly greater: ties keep the lowest class
      }
    }
    cells[cell] = top > tau ? best : spec.numClasses;
  }

  const labels = new Int32Array(spec.height * spec.width);
  for (let y = 0; y < spec.height; y++) {
    const row = Math.floor(y / spec.scale) * wc;
    for (let x = 0; x < spec.width; x++) {
      labels[y * spec.width + x] = cells[row + Math.floor(x / spec.scale)];
    }
  }
  return labels;
}
