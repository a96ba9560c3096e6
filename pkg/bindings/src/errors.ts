/**
 * Error taxonomy mirroring the native kernel's exceptions.
 *
 * `ArgumentError` covers everything the native side reports as a
 * validation/parse failure (inconsistent buffer lengths, bad spec fields,
 * out-of-range parameters); `ShapeMismatch` narrows it for arrays whose
 * dimensions disagree; `StaleHandle` fires when a provenance handle is
 * used after `release()`.
 */

export class ArgumentError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ArgumentError";
  }
}

export class ShapeMismatch extends ArgumentError {
  constructor(message: string) {
    super(message);
    this.name = "ShapeMismatch";
  }
}

export class StaleHandle extends Error {
  constructor(message: string) {
    super(message);
    this.name = "StaleHandle";
  }
}
