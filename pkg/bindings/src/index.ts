/**
 * Host-language bindings for the instance-mask projection kernel.
 *
 * Entry points:
 * - `boundForward` / `boundBackward`: the projection operator over flat
 *   typed-array buffers, with an opaque provenance handle carrying the
 *   winner bookkeeping between the two calls.
 * - `projectToSemantic`: projection-only segmentation (argmax + threshold
 *   + nearest upsample) in one call.
 * - `Tape` / `impProject` / `numericGradcheck`: a minimal autograd
 *   integration showing the forward/backward/release lifecycle a host
 *   framework should follow.
 */

export {
  boundForward,
  boundBackward,
  projectToSemantic,
  canvasCells,
  ProvenanceHandle,
  type CanvasSpec,
  type ForwardInputs,
  type ForwardResult,
  type BackwardResult,
  type BackwardOptions,
  type MaskDims,
  type Precision,
  type RealArray,
} from "./kernel.js";

export {
  Tape,
  Tensor,
  impProject,
  dot,
  numericGradcheck,
  canvasSize,
  type GradcheckOptions,
  type GradcheckReport,
} from "./autograd.js";

export { ArgumentError, ShapeMismatch, StaleHandle } from "./errors.js";
