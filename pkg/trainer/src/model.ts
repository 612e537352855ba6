/**
 * The classifier: a small residual CNN over 1-channel memory images, with
 * hand-rolled forward/backward passes (no framework dependency).
 *
 * Canonical layer list (matching the verifier's weight-file graph):
 *   0 conv(1->c,3,s1,p1)  1 relu
 *   2 conv(c->c)          3 relu   4 conv(c->c)   5 residual_add(1)   6 relu
 *   7 maxpool(2,2)
 *   8 conv(c->c)          9 relu  10 conv(c->c)  11 residual_add(7)  12 relu
 *  13 global_avg_pool    14 dense(c->2)          15 softmax
 *
 * Conv weights serialize as (out, in, kh, kw) row-major; dense as (out, in);
 * biases follow weights.  Logit order is (benign, corrupted).
 */

import { LayerKind, WeightLayer, readWeightFile } from "./formats.js";
import { Prng } from "./rng.js";
import {
  ConvParams,
  conv2dBackward,
  conv2dForward,
  convOutSize,
  denseBackward,
  denseForward,
  globalAvgPool,
  globalAvgPoolBackward,
  maxPoolBackward,
  maxPoolForward,
  relu,
  reluBackward,
} from "./tensors.js";

export const CHANNELS = 8;
export const SIDE = 128;

function heConv(inCh: number, outCh: number, k: number, rng: Prng): ConvParams {
  const fanIn = inCh * k * k;
  const std = Math.sqrt(2 / fanIn);
  const weight = new Float32Array(outCh * inCh * k * k);
  for (let i = 0; i < weight.length; i++) weight[i] = Math.fround(rng.normal() * std);
  return { inCh, outCh, k, stride: 1, pad: (k - 1) / 2, weight, bias: new Float32Array(outCh) };
}

export interface DenseParams {
  inF: number;
  outF: number;
  weight: Float32Array; // (out, in)
  bias: Float32Array;
}

interface Activations {
  x0: Float32Array;
  z1: Float32Array; a1: Float32Array;
  z2: Float32Array; a2: Float32Array;
  z3: Float32Array; s1: Float32Array; a3: Float32Array;
  p: Float32Array; pIdx: Int32Array;
  z4: Float32Array; a4: Float32Array;
  z5: Float32Array; s2: Float32Array; a5: Float32Array;
  g: Float32Array;
  logits: Float32Array;
  side: number;
  pooledSide: number;
}

export class Network {
  convs: ConvParams[];
  dense: DenseParams;
  channels: number;

  constructor(seed: number, channels: number = CHANNELS) {
    const rng = new Prng(BigInt(seed) * 2654435761n + 1n);
    this.channels = channels;
    this.convs = [
      heConv(1, channels, 3, rng),
      heConv(channels, channels, 3, rng),
      heConv(channels, channels, 3, rng),
      heConv(channels, channels, 3, rng),
      heConv(channels, channels, 3, rng),
    ];
    const std = Math.sqrt(2 / channels);
    const weight = new Float32Array(2 * channels);
    for (let i = 0; i < weight.length; i++) weight[i] = Math.fround(rng.normal() * std);
    this.dense = { inF: channels, outF: 2, weight, bias: new Float32Array(2) };
  }

  forward(image: Float32Array, side: number): Activations {
    const c = this.channels;
    const [c1, c2, c3, c4, c5] = this.convs;
    const z1 = conv2dForward(image, side, side, c1).out;
    const a1 = relu(z1);
    const z2 = conv2dForward(a1, side, side, c2).out;
    const a2 = relu(z2);
    const z3 = conv2dForward(a2, side, side, c3).out;
    const s1 = new Float32Array(z3.length);
    for (let i = 0; i < s1.length; i++) s1[i] = Math.fround(z3[i] + a1[i]);
    const a3 = relu(s1);
    const pool = maxPoolForward(a3, c, side, side, 2, 2);
    const ps = pool.oh;
    const z4 = conv2dForward(pool.out, ps, ps, c4).out;
    const a4 = relu(z4);
    const z5 = conv2dForward(a4, ps, ps, c5).out;
    const s2 = new Float32Array(z5.length);
    for (let i = 0; i < s2.length; i++) s2[i] = Math.fround(z5[i] + pool.out[i]);
    const a5 = relu(s2);
    const g = globalAvgPool(a5, c, ps * ps);
    const logits = denseForward(g, this.dense.weight, this.dense.bias, c, 2);
    return {
      x0: image, z1, a1, z2, a2, z3, s1, a3,
      p: pool.out, pIdx: pool.idx, z4, a4, z5, s2, a5, g, logits,
      side, pooledSide: ps,
    };
  }

  logits(image: Float32Array, side: number): Float32Array {
    return this.forward(image, side).logits;
  }
}

/** Gradient accumulators matching a Network's parameter layout. */
export class Gradients {
  convW: Float64Array[];
  convB: Float64Array[];
  denseW: Float64Array;
  denseB: Float64Array;

  constructor(net: Network) {
    this.convW = net.convs.map((p) => new Float64Array(p.weight.length));
    this.convB = net.convs.map((p) => new Float64Array(p.bias.length));
    this.denseW = new Float64Array(net.dense.weight.length);
    this.denseB = new Float64Array(net.dense.bias.length);
  }

  reset(): void {
    for (const g of [...this.convW, ...this.convB]) g.fill(0);
    this.denseW.fill(0);
    this.denseB.fill(0);
  }

  scale(factor: number): void {
    for (const g of [...this.convW, ...this.convB, this.denseW, this.denseB]) {
      for (let i = 0; i < g.length; i++) g[i] *= factor;
    }
  }
}

/** Backprop one sample's d(logits); accumulates into grads. */
export function backward(
  net: Network, acts: Activations, dLogits: Float32Array, grads: Gradients,
): void {
  const c = net.channels;
  const side = acts.side;
  const ps = acts.pooledSide;
  const [c1, c2, c3, c4, c5] = net.convs;

  const dg = denseBackward(acts.g, net.dense.weight, dLogits, c, 2,
    grads.denseW, grads.denseB);
  const da5 = globalAvgPoolBackward(dg, c, ps * ps);
  const ds2 = reluBackward(acts.s2, da5);
  // residual: s2 = z5 + p
  const dz5 = ds2;
  const da4 = conv2dBackward(acts.a4, ps, ps, c5, dz5, ps, ps,
    grads.convW[4], grads.convB[4]);
  const dz4 = reluBackward(acts.z4, da4);
  const dpConv = conv2dBackward(acts.p, ps, ps, c4, dz4, ps, ps,
    grads.convW[3], grads.convB[3]);
  const dp = new Float32Array(dpConv.length);
  for (let i = 0; i < dp.length; i++) dp[i] = Math.fround(dpConv[i] + ds2[i]);
  const da3 = maxPoolBackward(dp, acts.pIdx, c * side * side);
  const ds1 = reluBackward(acts.s1, da3);
  // residual: s1 = z3 + a1
  const dz3 = ds1;
  const da2 = conv2dBackward(acts.a2, side, side, c3, dz3, side, side,
    grads.convW[2], grads.convB[2]);
  const dz2 = reluBackward(acts.z2, da2);
  const da1conv = conv2dBackward(acts.a1, side, side, c2, dz2, side, side,
    grads.convW[1], grads.convB[1]);
  const da1 = new Float32Array(da1conv.length);
  for (let i = 0; i < da1.length; i++) da1[i] = Math.fround(da1conv[i] + ds1[i]);
  const dz1 = reluBackward(acts.z1, da1);
  conv2dBackward(acts.x0, side, side, c1, dz1, side, side,
    grads.convW[0], grads.convB[0]);
}

// ---- weight-file bridge ------------------------------------------------------

export function exportLayers(net: Network): WeightLayer[] {
  const c = net.channels;
  const conv = (p: ConvParams): WeightLayer => {
    const params = new Float32Array(p.weight.length + p.bias.length);
    params.set(p.weight, 0);
    params.set(p.bias, p.weight.length);
    return { kind: LayerKind.Conv2d, dims: [p.inCh, p.outCh, p.k, p.stride, p.pad], params };
  };
  const bare = (kind: LayerKind, dims: number[] = []): WeightLayer => ({
    kind, dims, params: new Float32Array(0),
  });
  const dense = new Float32Array(net.dense.weight.length + 2);
  dense.set(net.dense.weight, 0);
  dense.set(net.dense.bias, net.dense.weight.length);
  return [
    conv(net.convs[0]),
    bare(LayerKind.Relu),
    conv(net.convs[1]),
    bare(LayerKind.Relu),
    conv(net.convs[2]),
    bare(LayerKind.ResidualAdd, [1]),
    bare(LayerKind.Relu),
    bare(LayerKind.MaxPool2d, [2, 2]),
    conv(net.convs[3]),
    bare(LayerKind.Relu),
    conv(net.convs[4]),
    bare(LayerKind.ResidualAdd, [7]),
    bare(LayerKind.Relu),
    bare(LayerKind.GlobalAvgPool),
    { kind: LayerKind.Dense, dims: [c, 2], params: dense },
    bare(LayerKind.Softmax),
  ];
}

/**
 * Reference forward pass over any weight-file graph; returns the 2 logits
 * (a trailing softmax is the classifier's final squash and is skipped for
 * logit-level cross-checks).
 */
export function referenceForward(
  layers: WeightLayer[], image: Float32Array, side: number,
): Float32Array {
  let x = image;
  let ch = 1;
  let h = side;
  let w = side;
  let flat = false;
  const outputs: { x: Float32Array; ch: number; h: number; w: number; flat: boolean }[] = [];
  for (const layer of layers) {
    if (layer.kind === LayerKind.Conv2d) {
      const [inCh, outCh, k, stride, pad] = layer.dims;
      const split = outCh * inCh * k * k;
      const params: ConvParams = {
        inCh, outCh, k, stride, pad,
        weight: layer.params.subarray(0, split) as Float32Array,
        bias: layer.params.subarray(split) as Float32Array,
      };
      const res = conv2dForward(x, h, w, params);
      x = res.out;
      ch = outCh;
      h = res.oh;
      w = res.ow;
    } else if (layer.kind === LayerKind.Relu) {
      x = relu(x);
    } else if (layer.kind === LayerKind.MaxPool2d) {
      const [k, stride] = layer.dims;
      const res = maxPoolForward(x, ch, h, w, k, stride);
      x = res.out;
      h = res.oh;
      w = res.ow;
    } else if (layer.kind === LayerKind.GlobalAvgPool) {
      x = globalAvgPool(x, ch, h * w);
      flat = true;
    } else if (layer.kind === LayerKind.Dense) {
      const [inF, outF] = layer.dims;
      const split = outF * inF;
      x = denseForward(
        x,
        layer.params.subarray(0, split) as Float32Array,
        layer.params.subarray(split) as Float32Array,
        inF, outF,
      );
      flat = true;
      ch = outF;
    } else if (layer.kind === LayerKind.ResidualAdd) {
      const src = outputs[layer.dims[0]];
      const sum = new Float32Array(x.length);
      for (let i = 0; i < x.length; i++) sum[i] = Math.fround(x[i] + src.x[i]);
      x = sum;
    } else if (layer.kind === LayerKind.Softmax) {
      // logits-level output
    } else {
      throw new Error(`unknown layer kind ${layer.kind}`);
    }
    outputs.push({ x, ch, h, w, flat });
  }
  return x;
}

export function referenceForwardFile(
  weightFile: Uint8Array, image: Float32Array, side: number,
): Float32Array {
  return referenceForward(readWeightFile(weightFile), image, side);
}
