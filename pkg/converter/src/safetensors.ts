/**
 * Minimal safetensors reader/writer.
 *
 * Layout: u64 LE header length, UTF-8 JSON header mapping tensor name to
 * { dtype, shape, data_offsets: [begin, end] } relative to the byte after
 * the header, plus an optional "__metadata__" entry.
 */

export interface TensorInfo {
  dtype: string;
  shape: number[];
  dataOffsets: [number, number];
}

export interface SafetensorsFile {
  tensors: Map<string, TensorInfo>;
  metadata: Record<string, string>;
  payload: Buffer;
}

export function parseSafetensors(buf: Buffer): SafetensorsFile {
  if (buf.length < 8) {
    throw new Error("safetensors: file shorter than header length field");
  }
  const headerLen = Number(buf.readBigUInt64LE(0));
  if (8 + headerLen > buf.length) {
    throw new Error("safetensors: header extends past end of file");
  }
  let header: Record<string, unknown>;
  try {
    header = JSON.parse(buf.subarray(8, 8 + headerLen).toString("utf-8"));
  } catch (err) {
    throw new Error(`safetensors: bad header JSON: ${err}`);
  }
  const payload = buf.subarray(8 + headerLen);
  const tensors = new Map<string, TensorInfo>();
  let metadata: Record<string, string> = {};
  for (const [name, raw] of Object.entries(header)) {
    if (name === "__metadata__") {
      metadata = raw as Record<string, string>;
      continue;
    }
    const d = raw as { dtype: string; shape: number[]; data_offsets: [number, number] };
    if (!d.dtype || !Array.isArray(d.shape) || !Array.isArray(d.data_offsets)) {
      throw new Error(`safetensors: malformed descriptor for '${name}'`);
    }
    const [begin, end] = d.data_offsets;
    if (begin > end || end > payload.length) {
      throw new Error(`safetensors: tensor '${name}' data out of bounds`);
    }
    tensors.set(name, { dtype: d.dtype, shape: d.shape, dataOffsets: [begin, end] });
  }
  return { tensors, metadata, payload };
}

function f16ToF32(h: number): number {
  const sign = (h & 0x8000) >> 15;
  const exp = (h & 0x7c00) >> 10;
  const frac = h & 0x03ff;
  let val: number;
  if (exp === 0) {
    val = frac * 2 ** -24;
  } else if (exp === 0x1f) {
    val = frac ? NaN : Infinity;
  } else {
    val = (1 + frac * 2 ** -10) * 2 ** (exp - 15);
  }
  return sign ? -val : val;
}

/** Read one tensor as Float32Array (casting F16/BF16/F64 when needed). */
export function readTensorF32(file: SafetensorsFile, name: string): Float32Array {
  const info = file.tensors.get(name);
  if (info === undefined) {
    throw new Error(`safetensors: missing tensor '${name}'`);
  }
  const [begin, end] = info.dataOffsets;
  const bytes = file.payload.subarray(begin, end);
  const count = info.shape.reduce((a, b) => a * b, 1);
  const out = new Float32Array(count);
  switch (info.dtype) {
    case "F32": {
      if (bytes.length !== count * 4) {
        throw new Error(`safetensors: tensor '${name}' byte length mismatch`);
      }
      for (let i = 0; i < count; i++) out[i] = bytes.readFloatLE(i * 4);
      return out;
    }
    case "F16": {
      if (bytes.length !== count * 2) {
        throw new Error(`safetensors: tensor '${name}' byte length mismatch`);
      }
      for (let i = 0; i < count; i++) out[i] = Math.fround(f16ToF32(bytes.readUInt16LE(i * 2)));
      return out;
    }
    case "BF16": {
      if (bytes.length !== count * 2) {
        throw new Error(`safetensors: tensor '${name}' byte length mismatch`);
      }
      const scratch = Buffer.alloc(4);
      for (let i = 0; i < count; i++) {
        scratch.writeUInt32LE(bytes.readUInt16LE(i * 2) << 16, 0);
        out[i] = scratch.readFloatLE(0);
      }
      return out;
    }
    case "F64": {
      if (bytes.length !== count * 8) {
        throw new Error(`safetensors: tensor '${name}' byte length mismatch`);
      }
      for (let i = 0; i < count; i++) out[i] = Math.fround(bytes.readDoubleLE(i * 8));
      return out;
    }
    default:
      throw new Error(`safetensors: tensor '${name}' has unsupported dtype ${info.dtype}`);
  }
}

/** Writer used for fixtures and round-trip tests. */
export function writeSafetensors(
  tensors: Map<string, { dtype: "F32"; shape: number[]; data: Float32Array }>
): Buffer {
  const header: Record<string, unknown> = {};
  let offset = 0;
  const chunks: Buffer[] = [];
  for (const [name, t] of tensors) {
    const bytes = Buffer.from(t.data.buffer.slice(t.data.byteOffset, t.data.byteOffset + t.data.byteLength));
    header[name] = { dtype: t.dtype, shape: t.shape, data_offsets: [offset, offset + bytes.length] };
    offset += bytes.length;
    chunks.push(bytes);
  }
  const headerBuf = Buffer.from(JSON.stringify(header), "utf-8");
  const lenBuf = Buffer.alloc(8);
  lenBuf.writeBigUInt64LE(BigInt(headerBuf.length), 0);
  return Buffer.concat([lenBuf, headerBuf, ...chunks]);
}
