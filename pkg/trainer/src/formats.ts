/**
 * Binary formats shared with the verifier toolkit: the `.lmas` snapshot
 * stream (framed, RLE-compressed memory captures) and the `.lmaw` weight
 * file.  Implemented from the format documentation, independently of the
 * toolkit's own codecs, so the two sides cross-check each other.
 */

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array): number {
  let crc = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    crc = CRC_TABLE[(crc ^ data[i]) & 0xff] ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

export function readUvarint(buf: Uint8Array, pos: number): [number, number] {
  let result = 0;
  let shift = 0;
  for (;;) {
    if (pos >= buf.length) throw new Error("truncated uvarint");
    const b = buf[pos++];
    result += (b & 0x7f) * 2 ** shift;
    if ((b & 0x80) === 0) return [result, pos];
    shift += 7;
    if (shift > 63) throw new Error("uvarint too long");
  }
}

export function rleDecode(stream: Uint8Array, expected: number): Uint8Array {
  const out = new Uint8Array(expected);
  let at = 0;
  let pos = 0;
  while (pos < stream.length) {
    const tag = stream[pos++];
    let len: number;
    [len, pos] = readUvarint(stream, pos);
    if (len < 1) throw new Error("token length must be >= 1");
    if (at + len > expected) throw new Error("decoded length exceeds expected");
    if (tag === 0x00) {
      at += len; // Uint8Array is zero-initialized
    } else if (tag === 0x01) {
      if (pos + len > stream.length) throw new Error("literal extends past stream");
      out.set(stream.subarray(pos, pos + len), at);
      pos += len;
      at += len;
    } else {
      throw new Error(`unknown token tag 0x${tag.toString(16)}`);
    }
  }
  if (at !== expected) throw new Error(`decoded ${at} bytes, expected ${expected}`);
  return out;
}

export interface SnapshotRecord {
  sessionId: Uint8Array;
  seqNo: bigint;
  reasonCode: number;
  memSizeBytes: number;
  memory: Uint8Array;
}

const RECORD_MAGIC = 0x31414d4c; // "LMA1" little-endian

export function parseRecords(data: Uint8Array): SnapshotRecord[] {
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const records: SnapshotRecord[] = [];
  let pos = 0;
  while (pos < data.length) {
    if (pos + 46 > data.length) throw new Error("record header truncated");
    if (view.getUint32(pos, true) !== RECORD_MAGIC) throw new Error("bad record magic");
    if (data[pos + 4] !== 1) throw new Error("unsupported record version");
    const sessionId = data.subarray(pos + 5, pos + 21);
    const seqNo = view.getBigUint64(pos + 21, true);
    const reasonCode = data[pos + 29];
    const memSize = Number(view.getBigUint64(pos + 30, true));
    const payloadLen = Number(view.getBigUint64(pos + 38, true));
    const end = pos + 46 + payloadLen;
    if (end + 4 > data.length) throw new Error("record body truncated");
    const crc = view.getUint32(end, true);
    if (crc !== crc32(data.subarray(pos, end))) throw new Error("record checksum mismatch");
    records.push({
      sessionId: sessionId.slice(),
      seqNo,
      reasonCode,
      memSizeBytes: memSize,
      memory: rleDecode(data.subarray(pos + 46, end), memSize),
    });
    pos = end + 4;
  }
  return records;
}

// ---- weight files ----------------------------------------------------------

export enum LayerKind {
  Conv2d = 1,
  Relu = 2,
  MaxPool2d = 3,
  GlobalAvgPool = 4,
  Dense = 5,
  ResidualAdd = 6,
  Softmax = 7,
}

export interface WeightLayer {
  kind: LayerKind;
  dims: number[];
  params: Float32Array; // weights then biases, row-major
}

const DIM_COUNT: Record<LayerKind, number> = {
  [LayerKind.Conv2d]: 5,
  [LayerKind.Relu]: 0,
  [LayerKind.MaxPool2d]: 2,
  [LayerKind.GlobalAvgPool]: 0,
  [LayerKind.Dense]: 2,
  [LayerKind.ResidualAdd]: 1,
  [LayerKind.Softmax]: 0,
};

function paramCount(kind: LayerKind, dims: number[]): number {
  if (kind === LayerKind.Conv2d) {
    const [inCh, outCh, k] = dims;
    return outCh * inCh * k * k + outCh;
  }
  if (kind === LayerKind.Dense) {
    const [inF, outF] = dims;
    return outF * inF + outF;
  }
  return 0;
}

const WEIGHT_MAGIC = "LMAW";

export function writeWeightFile(layers: WeightLayer[]): Uint8Array {
  let size = 4 + 1 + 2;
  for (const layer of layers) {
    size += 1 + 4 * layer.dims.length + 4 * layer.params.length;
  }
  const out = new Uint8Array(size + 4);
  const view = new DataView(out.buffer);
  out.set([...WEIGHT_MAGIC].map((c) => c.charCodeAt(0)), 0);
  out[4] = 1;
  view.setUint16(5, layers.length, true);
  let pos = 7;
  for (const layer of layers) {
    if (layer.params.length !== paramCount(layer.kind, layer.dims)) {
      throw new Error(`layer kind ${layer.kind}: parameter count mismatch`);
    }
    out[pos++] = layer.kind;
    for (const dim of layer.dims) {
      view.setUint32(pos, dim, true);
      pos += 4;
    }
    for (let i = 0; i < layer.params.length; i++) {
      view.setFloat32(pos, layer.params[i], true);
      pos += 4;
    }
  }
  view.setUint32(pos, crc32(out.subarray(0, pos)), true);
  return out;
}

export function readWeightFile(data: Uint8Array): WeightLayer[] {
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const magic = String.fromCharCode(...data.subarray(0, 4));
  if (magic !== WEIGHT_MAGIC) throw new Error("bad weight file magic");
  if (data[4] !== 1) throw new Error("unsupported weight file version");
  const count = view.getUint16(5, true);
  const layers: WeightLayer[] = [];
  let pos = 7;
  for (let i = 0; i < count; i++) {
    const kind = data[pos++] as LayerKind;
    const nDims = DIM_COUNT[kind];
    if (nDims === undefined) throw new Error(`unknown layer kind ${kind}`);
    const dims: number[] = [];
    for (let d = 0; d < nDims; d++) {
      dims.push(view.getUint32(pos, true));
      pos += 4;
    }
    const nParams = paramCount(kind, dims);
    const params = new Float32Array(nParams);
    for (let p = 0; p < nParams; p++) {
      params[p] = view.getFloat32(pos, true);
      pos += 4;
    }
    layers.push({ kind, dims, params });
  }
  if (pos !== data.length - 4) throw new Error("weight file length mismatch");
  if (view.getUint32(pos, true) !== crc32(data.subarray(0, pos))) {
    throw new Error("weight file checksum mismatch");
  }
  return layers;
}

// ---- dataset manifest -------------------------------------------------------

export interface ManifestEntry {
  snapshot_file: string;
  record_index: number;
  label: "Benign" | "Corrupted";
  source_program: string;
  input_id: string;
  base_input: string;
  corruption: object | null;
  split: "train" | "val" | "test";
}

export interface Manifest {
  module: string;
  seed: number;
  created: string;
  entries: ManifestEntry[];
}
