/**
 * Supervised training over a labeled snapshot dataset.
 *
 * Determinism contract: a fixed seed yields a byte-identical weight file.
 * All randomness (weight init, class balancing, epoch shuffles) flows from
 * the seed; the math is single-threaded with a fixed reduction order.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { Manifest, ManifestEntry, parseRecords, writeWeightFile } from "./formats.js";
import { toImage } from "./imaging.js";
import { Gradients, Network, SIDE, backward, exportLayers } from "./model.js";
import { Prng } from "./rng.js";
import { softmaxXent } from "./tensors.js";

export { Prng } from "./rng.js";

export interface Sample {
  image: Float32Array;
  label: number; // 0 benign, 1 corrupted
}

export function loadSplit(
  manifest: Manifest,
  manifestDir: string,
  split: string,
  side: number = SIDE,
): Sample[] {
  const byFile = new Map<string, ManifestEntry[]>();
  for (const entry of manifest.entries) {
    if (entry.split !== split) continue;
    const list = byFile.get(entry.snapshot_file) ?? [];
    list.push(entry);
    byFile.set(entry.snapshot_file, list);
  }
  const samples: Sample[] = [];
  for (const [file, entries] of [...byFile.entries()].sort()) {
    const records = parseRecords(fs.readFileSync(path.join(manifestDir, file)));
    for (const entry of entries.sort((a, b) => a.record_index - b.record_index)) {
      samples.push({
        image: toImage(records[entry.record_index].memory, side),
        label: entry.label === "Corrupted" ? 1 : 0,
      });
    }
  }
  return samples;
}

export function balance(samples: Sample[], maxPerClass: number, rng: Prng): Sample[] {
  const benign = samples.filter((s) => s.label === 0);
  const corrupted = samples.filter((s) => s.label === 1);
  rng.shuffle(benign);
  rng.shuffle(corrupted);
  const n = Math.min(benign.length, corrupted.length, maxPerClass);
  return rng.shuffle([...benign.slice(0, n), ...corrupted.slice(0, n)]);
}

export interface TrainConfig {
  epochs: number;
  lr: number;
  seed: number;
  batchSize: number;
  maxPerClass: number;
  side: number;
}

export const DEFAULT_CONFIG: TrainConfig = {
  epochs: 3,
  lr: 0.02,
  seed: 7,
  batchSize: 8,
  maxPerClass: 400,
  side: SIDE,
};

export interface TrainReport {
  epochs: { epoch: number; loss: number; val_accuracy: number }[];
  final_val_accuracy: number;
  diverged: boolean;
  train_samples: number;
  val_samples: number;
  seed: number;
}

/** Adam over the network's parameter arrays; f64 moments, f32 weights. */
class Adam {
  private m: Float64Array[];
  private v: Float64Array[];
  private params: Float32Array[];
  private step = 0;

  constructor(private net: Network, private lr: number) {
    this.params = [
      ...net.convs.flatMap((p) => [p.weight, p.bias]),
      net.dense.weight,
      net.dense.bias,
    ];
    this.m = this.params.map((p) => new Float64Array(p.length));
    this.v = this.params.map((p) => new Float64Array(p.length));
  }

  apply(grads: Gradients): void {
    const flat = [
      ...grads.convW.flatMap((w, i) => [w, grads.convB[i]]),
      grads.denseW,
      grads.denseB,
    ];
    this.step++;
    const b1 = 0.9;
    const b2 = 0.999;
    const eps = 1e-8;
    const correction1 = 1 - b1 ** this.step;
    const correction2 = 1 - b2 ** this.step;
    for (let p = 0; p < this.params.length; p++) {
      const params = this.params[p];
      const g = flat[p];
      const m = this.m[p];
      const v = this.v[p];
      for (let i = 0; i < params.length; i++) {
        m[i] = b1 * m[i] + (1 - b1) * g[i];
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
        const mHat = m[i] / correction1;
        const vHat = v[i] / correction2;
        params[i] = Math.fround(params[i] - (this.lr * mHat) / (Math.sqrt(vHat) + eps));
      }
    }
  }
}

export function accuracy(net: Network, samples: Sample[], side: number): number {
  if (samples.length === 0) return 0;
  let hits = 0;
  for (const sample of samples) {
    const logits = net.logits(sample.image, side);
    const pick = logits[1] >= logits[0] ? 1 : 0;
    if (pick === sample.label) hits++;
  }
  return hits / samples.length;
}

export async function train(
  trainSamples: Sample[],
  valSamples: Sample[],
  config: TrainConfig,
): Promise<{ weightFile: Uint8Array; report: TrainReport; net: Network }> {
  if (trainSamples.length === 0) throw new Error("empty training split");
  if (valSamples.length === 0) throw new Error("empty validation split");

  const rng = new Prng(BigInt(config.seed) * 65537n + 11n);
  const net = new Network(config.seed);
  const optimizer = new Adam(net, config.lr);
  const grads = new Gradients(net);

  const epochs: TrainReport["epochs"] = [];
  for (let epoch = 0; epoch < config.epochs; epoch++) {
    const order = rng.shuffle([...trainSamples]);
    let lossSum = 0;
    for (let at = 0; at < order.length; at += config.batchSize) {
      const chunk = order.slice(at, at + config.batchSize);
      grads.reset();
      for (const sample of chunk) {
        const acts = net.forward(sample.image, config.side);
        const { loss, grad } = softmaxXent(acts.logits, sample.label);
        lossSum += loss;
        backward(net, acts, grad, grads);
      }
      grads.scale(1 / chunk.length);
      optimizer.apply(grads);
    }
    const valAcc = accuracy(net, valSamples, config.side);
    epochs.push({
      epoch,
      loss: lossSum / order.length,
      val_accuracy: valAcc,
    });
  }

  const finalAcc = epochs[epochs.length - 1].val_accuracy;
  const report: TrainReport = {
    epochs,
    final_val_accuracy: finalAcc,
    diverged: finalAcc <= 0.55,
    train_samples: trainSamples.length,
    val_samples: valSamples.length,
    seed: config.seed,
  };
  return { weightFile: writeWeightFile(exportLayers(net)), report, net };
}

export async function trainFromManifest(
  manifestPath: string,
  config: TrainConfig,
): Promise<{ weightFile: Uint8Array; report: TrainReport; net: Network }> {
  const manifest = JSON.parse(fs.readFileSync(manifestPath, "utf8")) as Manifest;
  const dir = path.dirname(manifestPath);
  const rng = new Prng(BigInt(config.seed) ^ 0xda7a5e7n);
  const trainSamples = balance(loadSplit(manifest, dir, "train", config.side),
    config.maxPerClass, rng);
  const valSamples = balance(loadSplit(manifest, dir, "val", config.side),
    config.maxPerClass, rng);
  return train(trainSamples, valSamples, config);
}
