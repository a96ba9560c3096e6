/**
 * helpers.ts — fixture loading for the replay tests.
 *
 * Fixtures are JSON dumps produced by the native CLI (`fixtures`
 * subcommand): little-endian base64 buffers plus shape metadata. Decoding
 * copies into fresh ArrayBuffers so every typed-array view is aligned.
 */

import { readFileSync, readdirSync } from "node:fs";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

import type { CanvasSpec } from "../dist/index.js";

export const FIXTURE_DIR = join(
  dirname(fileURLToPath(import.meta.url)),
  "fixtures",
);

function bytes(b64: string): Uint8Array {
  // new Uint8Array(view) copies, giving an offset-0 exactly-sized buffer
  return new Uint8Array(Buffer.from(b64, "base64"));
}

export function f32(b64: string): Float32Array {
  return new Float32Array(bytes(b64).buffer);
}

export function i32(b64: string): Int32Array {
  return new Int32Array(bytes(b64).buffer);
}

export function i64(b64: string): BigInt64Array {
  return new BigInt64Array(bytes(b64).buffer);
}

export interface Fixture {
  readonly name: string;
  readonly seed: number;
  readonly spec: CanvasSpec;
  readonly n: number;
  readonly maskDims: Array<[number, number]>;
  readonly boxes: Float32Array;
  readonly scores: Float32Array;
  readonly classes: BigInt64Array;
  readonly ordinals: BigInt64Array;
  readonly masks: Float32Array;
  readonly canvas: Float32Array;
  readonly winner: Int32Array;
  readonly gradCanvas: Float32Array;
  readonly dScores: Float32Array;
  readonly dMasks: Float32Array;
}

export function loadFixture(path: string): Fixture {
  const raw = JSON.parse(readFileSync(path, "utf8"));
  return {
    name: path.split("/").pop()!,
    seed: raw.seed,
    spec: {
      numClasses: raw.spec.num_classes,
      height: raw.spec.height,
      width: raw.spec.width,
      scale: raw.spec.scale,
    },
    n: raw.n,
    maskDims: raw.mask_dims,
    boxes: f32(raw.boxes_b64),
    scores: f32(raw.scores_b64),
    classes: i64(raw.classes_b64),
    ordinals: i64(raw.ordinals_b64),
    masks: f32(raw.masks_b64),
    canvas: f32(raw.canvas_b64),
    winner: i32(raw.winner_b64),
    gradCanvas: f32(raw.grad_canvas_b64),
    dScores: f32(raw.d_scores_b64),
    dMasks: f32(raw.d_masks_b64),
  };
}

export function allFixtures(): Fixture[] {
  return readdirSync(FIXTURE_DIR)
    .filter((f) => f.endsWith(".json"))
    .sort()
    .map((f) => loadFixture(join(FIXTURE_DIR, f)));
}

/** Byte-level equality: the strongest form of "bit-exact". */
export function sameBytes(
  a: Float32Array | Float64Array | Int32Array,
  b: Float32Array | Float64Array | Int32Array,
): boolean {
  if (a.byteLength !== b.byteLength) return false;
  const av = Buffer.from(a.buffer, a.byteOffset, a.byteLength);
  const bv = Buffer.from(b.buffer, b.byteOffset, b.byteLength);
  return av.equals(bv);
}
