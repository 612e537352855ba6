/**
 * Trainer command line.
 *
 *   train      --manifest data/manifest.json --out model.lmaw [--epochs 3]
 *              [--lr 0.002] [--seed 7] [--batch 16] [--max-per-class 600]
 *              [--report report.json]
 *   reference  --model model.lmaw --images images.bin [--side 128]
 *              [--out logits.json]      # images.bin = concatenated side^2 rasters
 *   transform  --snapshot run.lmas --index 0 --out img.pgm [--side 128]
 */

import * as fs from "node:fs";
import { parseRecords, readWeightFile } from "./formats.js";
import { pgmBytes, sampleRaster, toImage } from "./imaging.js";
import { referenceForward } from "./model.js";
import { DEFAULT_CONFIG, trainFromManifest } from "./train.js";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got ${argv[i]}`);
    }
    out.set(argv[i].slice(2), argv[i + 1]);
  }
  return out;
}

function need(args: Map<string, string>, key: string): string {
  const value = args.get(key);
  if (value === undefined) throw new Error(`missing required --${key}`);
  return value;
}

async function cmdTrain(args: Map<string, string>): Promise<number> {
  const config = {
    ...DEFAULT_CONFIG,
    epochs: Number(args.get("epochs") ?? DEFAULT_CONFIG.epochs),
    lr: Number(args.get("lr") ?? DEFAULT_CONFIG.lr),
    seed: Number(args.get("seed") ?? DEFAULT_CONFIG.seed),
    batchSize: Number(args.get("batch") ?? DEFAULT_CONFIG.batchSize),
    maxPerClass: Number(args.get("max-per-class") ?? DEFAULT_CONFIG.maxPerClass),
    side: Number(args.get("side") ?? DEFAULT_CONFIG.side),
  };
  const { weightFile, report } = await trainFromManifest(need(args, "manifest"), config);
  fs.writeFileSync(need(args, "out"), weightFile);
  const reportPath = args.get("report");
  if (reportPath) fs.writeFileSync(reportPath, JSON.stringify(report, null, 2) + "\n");
  console.log(JSON.stringify({
    out: need(args, "out"),
    final_val_accuracy: report.final_val_accuracy,
    diverged: report.diverged,
    epochs: report.epochs.length,
  }));
  return report.diverged ? 4 : 0;
}

function cmdReference(args: Map<string, string>): number {
  const side = Number(args.get("side") ?? 128);
  const layers = readWeightFile(fs.readFileSync(need(args, "model")));
  const raw = fs.readFileSync(need(args, "images"));
  const pixels = side * side;
  if (raw.length % pixels !== 0) throw new Error("images file is not a whole number of rasters");
  const logits: number[][] = [];
  for (let i = 0; i < raw.length / pixels; i++) {
    const raster = new Uint8Array(raw.buffer, raw.byteOffset + i * pixels, pixels);
    const image = new Float32Array(pixels);
    for (let p = 0; p < pixels; p++) image[p] = Math.fround(raster[p] / 255);
    logits.push([...referenceForward(layers, image, side)]);
  }
  const text = JSON.stringify(logits);
  const outPath = args.get("out");
  if (outPath) fs.writeFileSync(outPath, text + "\n");
  else console.log(text);
  return 0;
}

function cmdTransform(args: Map<string, string>): number {
  const side = Number(args.get("side") ?? 128);
  const records = parseRecords(fs.readFileSync(need(args, "snapshot")));
  const index = Number(args.get("index") ?? 0);
  const sampled = sampleRaster(records[index].memory, side);
  fs.writeFileSync(need(args, "out"), pgmBytes(sampled, side));
  return 0;
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  const args = parseArgs(rest);
  if (command === "train") return cmdTrain(args);
  if (command === "reference") return cmdReference(args);
  if (command === "transform") return cmdTransform(args);
  console.error("usage: cli.js {train|reference|transform} --flag value ...");
  return 1;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(`trainer: error: ${err.message}`);
    process.exit(1);
  },
);
