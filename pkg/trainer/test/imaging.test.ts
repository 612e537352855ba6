import * as fs from "node:fs";
import * as path from "node:path";
import { describe, expect, it } from "vitest";
import { parseRecords } from "../src/formats.js";
import { pgmBytes, sampleRaster, toImage } from "../src/imaging.js";

const FIXTURES = path.join(__dirname, "fixtures");

describe("memory-to-image transform", () => {
  it("maps zero memory to a black image", () => {
    const image = toImage(new Uint8Array(65536), 128);
    expect(image.length).toBe(128 * 128);
    expect(image.every((p) => p === 0)).toBe(true);
  });

  it("maps saturated memory to a white image", () => {
    const image = toImage(new Uint8Array(65536).fill(255), 64);
    expect(image.every((p) => p === 1)).toBe(true);
  });

  it("zero-pads the final partial row", () => {
    const memory = new Uint8Array(300).fill(0xff);
    const sampled = sampleRaster(memory, 2);
    // row 0 samples raster row 0 (all 0xff), row 1 samples raster row 1
    expect(sampled[0]).toBe(255);
    expect(sampled[3]).toBe(0); // the padded tail of row 1
  });

  it("handles empty memory as one zero row", () => {
    const sampled = sampleRaster(new Uint8Array(0), 16);
    expect(sampled.length).toBe(256);
    expect(sampled.every((b) => b === 0)).toBe(true);
  });

  it("reproduces the toolkit's PGM render byte for byte", () => {
    const stream = new Uint8Array(fs.readFileSync(path.join(FIXTURES, "sample.lmas")));
    const record = parseRecords(stream)[2];
    const expected = new Uint8Array(
      fs.readFileSync(path.join(FIXTURES, "sample_render.pgm")),
    );
    const got = pgmBytes(sampleRaster(record.memory, 128), 128);
    expect(got.length).toBe(expected.length);
    expect(Buffer.from(got).equals(Buffer.from(expected))).toBe(true);
  });
});
