/**
 * Flat-array tensor kernels: conv2d, maxpool, global average pool, dense,
 * softmax cross-entropy — forward and backward.  Layout is (channels, h, w)
 * row-major per sample.  Accumulation happens in f64 (plain JS numbers);
 * activations and parameters round to f32 on store, matching the deployed
 * engine's precision.
 */

export interface ConvParams {
  inCh: number;
  outCh: number;
  k: number;
  stride: number;
  pad: number;
  weight: Float32Array; // (out, in, k, k)
  bias: Float32Array; // (out,)
}

export function convOutSize(size: number, k: number, stride: number, pad: number): number {
  return Math.floor((size + 2 * pad - k) / stride) + 1;
}

export function conv2dForward(
  x: Float32Array, h: number, w: number, p: ConvParams,
): { out: Float32Array; oh: number; ow: number } {
  const { inCh, outCh, k, stride, pad } = p;
  const oh = convOutSize(h, k, stride, pad);
  const ow = convOutSize(w, k, stride, pad);
  const out = new Float32Array(outCh * oh * ow);
  for (let o = 0; o < outCh; o++) {
    const bias = p.bias[o];
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        let acc = bias;
        const baseY = oy * stride - pad;
        const baseX = ox * stride - pad;
        for (let c = 0; c < inCh; c++) {
          const wBase = ((o * inCh + c) * k) * k;
          const xBase = c * h * w;
          for (let dy = 0; dy < k; dy++) {
            const sy = baseY + dy;
            if (sy < 0 || sy >= h) continue;
            const rowW = wBase + dy * k;
            const rowX = xBase + sy * w;
            for (let dx = 0; dx < k; dx++) {
              const sx = baseX + dx;
              if (sx < 0 || sx >= w) continue;
              acc += p.weight[rowW + dx] * x[rowX + sx];
            }
          }
        }
        out[(o * oh + oy) * ow + ox] = Math.fround(acc);
      }
    }
  }
  return { out, oh, ow };
}

export function conv2dBackward(
  x: Float32Array, h: number, w: number, p: ConvParams,
  dOut: Float32Array, oh: number, ow: number,
  dWeight: Float64Array, dBias: Float64Array,
): Float32Array {
  const { inCh, outCh, k, stride, pad } = p;
  const dx = new Float64Array(inCh * h * w);
  for (let o = 0; o < outCh; o++) {
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        const g = dOut[(o * oh + oy) * ow + ox];
        if (g === 0) continue;
        dBias[o] += g;
        const baseY = oy * stride - pad;
        const baseX = ox * stride - pad;
        for (let c = 0; c < inCh; c++) {
          const wBase = ((o * inCh + c) * k) * k;
          const xBase = c * h * w;
          for (let dy = 0; dy < k; dy++) {
            const sy = baseY + dy;
            if (sy < 0 || sy >= h) continue;
            const rowW = wBase + dy * k;
            const rowX = xBase + sy * w;
            for (let ddx = 0; ddx < k; ddx++) {
              const sx = baseX + ddx;
              if (sx < 0 || sx >= w) continue;
              dWeight[rowW + ddx] += g * x[rowX + sx];
              dx[rowX + sx] += g * p.weight[rowW + ddx];
            }
          }
        }
      }
    }
  }
  return Float32Array.from(dx, Math.fround);
}

export function relu(x: Float32Array): Float32Array {
  const out = new Float32Array(x.length);
  for (let i = 0; i < x.length; i++) out[i] = x[i] > 0 ? x[i] : 0;
  return out;
}

export function reluBackward(pre: Float32Array, grad: Float32Array): Float32Array {
  const out = new Float32Array(grad.length);
  for (let i = 0; i < grad.length; i++) out[i] = pre[i] > 0 ? grad[i] : 0;
  return out;
}

export function maxPoolForward(
  x: Float32Array, ch: number, h: number, w: number, k: number, stride: number,
): { out: Float32Array; idx: Int32Array; oh: number; ow: number } {
  const oh = Math.floor((h - k) / stride) + 1;
  const ow = Math.floor((w - k) / stride) + 1;
  const out = new Float32Array(ch * oh * ow);
  const idx = new Int32Array(ch * oh * ow);
  for (let c = 0; c < ch; c++) {
    const base = c * h * w;
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        let best = -Infinity;
        let bestAt = -1;
        for (let dy = 0; dy < k; dy++) {
          const row = base + (oy * stride + dy) * w + ox * stride;
          for (let dx = 0; dx < k; dx++) {
            const v = x[row + dx];
            if (v > best) {
              best = v;
              bestAt = row + dx;
            }
          }
        }
        const at = (c * oh + oy) * ow + ox;
        out[at] = best;
        idx[at] = bestAt;
      }
    }
  }
  return { out, idx, oh, ow };
}

export function maxPoolBackward(
  grad: Float32Array, idx: Int32Array, inSize: number,
): Float32Array {
  const out = new Float32Array(inSize);
  for (let i = 0; i < grad.length; i++) out[idx[i]] += grad[i];
  return out;
}

export function globalAvgPool(x: Float32Array, ch: number, hw: number): Float32Array {
  const out = new Float32Array(ch);
  for (let c = 0; c < ch; c++) {
    let acc = 0;
    const base = c * hw;
    for (let i = 0; i < hw; i++) acc += x[base + i];
    out[c] = Math.fround(acc / hw);
  }
  return out;
}

export function globalAvgPoolBackward(grad: Float32Array, ch: number, hw: number): Float32Array {
  const out = new Float32Array(ch * hw);
  for (let c = 0; c < ch; c++) {
    const g = grad[c] / hw;
    const base = c * hw;
    for (let i = 0; i < hw; i++) out[base + i] = g;
  }
  return out;
}

export function denseForward(
  x: Float32Array, weight: Float32Array, bias: Float32Array, inF: number, outF: number,
): Float32Array {
  const out = new Float32Array(outF);
  for (let o = 0; o < outF; o++) {
    let acc = bias[o];
    const base = o * inF;
    for (let i = 0; i < inF; i++) acc += weight[base + i] * x[i];
    out[o] = Math.fround(acc);
  }
  return out;
}

export function denseBackward(
  x: Float32Array, weight: Float32Array, grad: Float32Array, inF: number, outF: number,
  dWeight: Float64Array, dBias: Float64Array,
): Float32Array {
  const dx = new Float64Array(inF);
  for (let o = 0; o < outF; o++) {
    const g = grad[o];
    dBias[o] += g;
    const base = o * inF;
    for (let i = 0; i < inF; i++) {
      dWeight[base + i] += g * x[i];
      dx[i] += g * weight[base + i];
    }
  }
  return Float32Array.from(dx, Math.fround);
}

/** Softmax cross-entropy; returns loss and d(logits). */
export function softmaxXent(logits: Float32Array, label: number): { loss: number; grad: Float32Array } {
  const max = Math.max(logits[0], logits[1]);
  const e0 = Math.exp(logits[0] - max);
  const e1 = Math.exp(logits[1] - max);
  const z = e0 + e1;
  const p = [e0 / z, e1 / z];
  const grad = Float32Array.from([p[0] - (label === 0 ? 1 : 0), p[1] - (label === 1 ? 1 : 0)]);
  return { loss: -Math.log(Math.max(p[label], 1e-12)), grad };
}
