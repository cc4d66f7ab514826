/**
 * Exact selected-count arithmetic, matching the frame server digit for digit.
 */

/**
 * floor(ratio * n) with the ratio read as its shortest round-trip decimal.
 *
 * A double like 0.29 sits just below the printed decimal, so the naive
 * Math.floor(0.29 * 100) drops to 28 while the server counts 29. The server
 * resolves this by parsing the ratio's shortest decimal representation in
 * exact arithmetic; Number.prototype.toString prints that same shortest
 * decimal, so flooring through it in BigInt reproduces the server's count
 * for every representable input.
 */
export function floorCount(ratio: number, n: number): number {
  if (!(ratio > 0 && ratio <= 1)) {
    throw new RangeError(`ratio must lie in (0, 1], got ${ratio}`);
  }
  if (!Number.isInteger(n) || n < 0) {
    throw new RangeError(`count must be a non-negative integer, got ${n}`);
  }
  const parts = /^(\d+)(?:\.(\d+))?(?:e([+-]?\d+))?$/.exec(ratio.toString());
  if (parts === null) {
    throw new RangeError(`unreadable ratio ${ratio}`);
  }
  const whole = parts[1] ?? "0";
  const frac = parts[2] ?? "";
  const scale = frac.length - (parts[3] === undefined ? 0 : Number(parts[3]));
  const scaled = BigInt(whole + frac) * BigInt(n);
  // value = scaled / 10^scale; BigInt division floors (operands non-negative)
  if (scale <= 0) {
    return Number(scaled * 10n ** BigInt(-scale));
  }
  return Number(scaled / 10n ** BigInt(scale));
}

/** Slider floor is 0.01; anything unparseable falls back to it too. */
export function clampRatio(value: number): number {
  if (!Number.isFinite(value)) {
    return 0.01;
  }
  return Math.min(1.0, Math.max(0.01, value));
}
