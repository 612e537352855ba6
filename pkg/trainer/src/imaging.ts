/**
 * Memory-to-image transform, re-implemented from the documented contract:
 * row-major raster at a fixed 256-byte row width (zero-padded final row,
 * one zero row for empty memory), then nearest-neighbor resampling with
 * src = floor(dst * srcDim / dstDim).  Byte value over 255 is the intensity.
 *
 * The test suite compares this against a committed PGM produced by the
 * toolkit's own renderer, byte for byte, to guard against transform drift
 * between the two components.
 */

export const ROW_WIDTH = 256;
export const DEFAULT_SIDE = 128;

export function sampleRaster(memory: Uint8Array, side: number): Uint8Array {
  const height = Math.max(1, Math.ceil(memory.length / ROW_WIDTH));
  const out = new Uint8Array(side * side);
  for (let y = 0; y < side; y++) {
    const srcY = Math.floor((y * height) / side);
    const rowBase = srcY * ROW_WIDTH;
    for (let x = 0; x < side; x++) {
      const srcX = Math.floor((x * ROW_WIDTH) / side);
      const at = rowBase + srcX;
      out[y * side + x] = at < memory.length ? memory[at] : 0;
    }
  }
  return out;
}

export function toImage(memory: Uint8Array, side: number = DEFAULT_SIDE): Float32Array {
  const sampled = sampleRaster(memory, side);
  const out = new Float32Array(side * side);
  for (let i = 0; i < sampled.length; i++) {
    out[i] = Math.fround(sampled[i] / 255);
  }
  return out;
}

export function pgmBytes(sampled: Uint8Array, side: number): Uint8Array {
  const header = new TextEncoder().encode(`P5\n${side} ${side}\n255\n`);
  const out = new Uint8Array(header.length + sampled.length);
  out.set(header, 0);
  out.set(sampled, header.length);
  return out;
}
