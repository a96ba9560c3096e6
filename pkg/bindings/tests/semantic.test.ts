/**
 * semantic.test.ts — projection-only segmentation hand cases: argmax with
 * the background threshold, lowest-class tie-break, nearest upsample.
 */

import { describe, expect, it } from "vitest";

import { ArgumentError, projectToSemantic, type ForwardInputs } from "../dist/index.js";

/** One detection fully covering the image with a constant mask value. */
function solid(
  cls: number,
  score: number,
  spec: ForwardInputs["spec"],
  maskValue = 1.0,
): Omit<ForwardInputs, "spec"> {
  return {
    boxes: Float32Array.from([0, 0, spec.width, spec.height]),
    scores: Float32Array.from([score]),
    classes: BigInt64Array.from([BigInt(cls)]),
    masks: new Float32Array(4).fill(maskValue),
    maskDims: [2, 2],
  };
}

const SPEC = { numClasses: 3, height: 8, width: 8, scale: 4 };
const BG = SPEC.numClasses;

describe("projectToSemantic", () => {
  it("labels everything background with no detections", () => {
    const labels = projectToSemantic(
      {
        boxes: new Float32Array(0),
        scores: new Float32Array(0),
        classes: new BigInt64Array(0),
        masks: new Float32Array(0),
        maskDims: [],
        spec: SPEC,
      },
      0.5,
    );
    expect(labels.length).toBe(64);
    expect(labels.every((v) => v === BG)).toBe(true);
  });

  it("labels a full-cover confident detection everywhere", () => {
    const labels = projectToSemantic({ ...solid(1, 0.75, SPEC), spec: SPEC }, 0.5);
    expect(labels.every((v) => v === 1)).toBe(true);
  });

  it("labels background when no value strictly exceeds tau", () => {
    // 0.75 is exactly representable, so the canvas value equals tau and
    // the strictly-greater test leaves every pixel background
    const labels = projectToSemantic({ ...solid(1, 0.75, SPEC), spec: SPEC }, 0.75);
    expect(labels.every((v) => v === BG)).toBe(true);
  });

  it("breaks exact class ties toward the lower class id", () => {
    const spec = { numClasses: 2, height: 4, width: 4, scale: 4 };
    const inputs: ForwardInputs = {
      boxes: Float32Array.from([0, 0, 4, 4, 0, 0, 4, 4]),
      scores: Float32Array.from([0.8, 0.8]),
      classes: BigInt64Array.from([1n, 0n]),
      masks: new Float32Array(8).fill(1),
      maskDims: [2, 2],
      spec,
    };
    const labels = projectToSemantic(inputs, 0.5);
    expect(labels.every((v) => v === 0)).toBe(true);
  });

  it("upsamples cells to pixels with nearest-neighbor geometry", () => {
    // one detection covering only the left half of a 2-cell-wide canvas
    const spec = { numClasses: 1, height: 4, width: 8, scale: 4 };
    const inputs: ForwardInputs = {
      boxes: Float32Array.from([0, 0, 4, 4]),
      scores: Float32Array.from([0.9]),
      classes: BigInt64Array.from([0n]),
      masks: new Float32Array(4).fill(1),
      maskDims: [2, 2],
      spec,
    };
    const labels = projectToSemantic(inputs, 0.5);
    for (let y = 0; y < 4; y++) {
      for (let x = 0; x < 8; x++) {
        expect(labels[y * 8 + x]).toBe(x < 4 ? 0 : 1);
      }
    }
  });

  it("handles image sizes that are not multiples of the scale", () => {
    // 5x7 at scale 4 -> 2x2 cells with centers at y in {2, 6}, x in {2, 6}.
    // The box [4,0,7,5] covers only cell (0,1): the x=2 column center falls
    // left of the box and the y=6 row center falls below it (half-open test).
    const spec = { numClasses: 1, height: 5, width: 7, scale: 4 };
    const inputs: ForwardInputs = {
      boxes: Float32Array.from([4, 0, 7, 5]),
      scores: Float32Array.from([0.9]),
      classes: BigInt64Array.from([0n]),
      masks: new Float32Array(4).fill(1),
      maskDims: [2, 2],
      spec,
    };
    const labels = projectToSemantic(inputs, 0.5);
    for (let y = 0; y < 5; y++) {
      for (let x = 0; x < 7; x++) {
        const covered = y < 4 && x >= 4;
        expect(labels[y * 7 + x], `pixel (${y}, ${x})`).toBe(covered ? 0 : 1);
      }
    }
  });

  it("rejects tau outside [0, 1]", () => {
    const inputs = { ...solid(0, 0.9, SPEC), spec: SPEC };
    expect(() => projectToSemantic(inputs, -0.1)).toThrow(ArgumentError);
    expect(() => projectToSemantic(inputs, 1.5)).toThrow(ArgumentError);
    expect(() => projectToSemantic(inputs, Number.NaN)).toThrow(ArgumentError);
  });
});
