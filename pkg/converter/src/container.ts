/**
 * The engine weight container: 8-byte magic "CNDNSATE", u32 LE version,
 * u64 LE header length, UTF-8 JSON header { meta, tensors } where tensors
 * maps name -> { dtype: "f32", shape, offset, byte_len }, then raw
 * little-endian float32 payloads. Byte-exact round trips.
 */

export const MAGIC = Buffer.from("CNDNSATE", "ascii");
export const FORMAT_VERSION = 1;

export interface EngineMeta {
  n_layers: number;
  n_heads: number;
  n_kv_heads: number;
  head_dim: number;
  model_dim: number;
  mlp_hidden: number;
  vocab_size: number;
  max_seq: number;
  rope_enabled: boolean;
  rope_theta: number;
  eos_token: number;
  norm: "rmsnorm" | "layernorm";
  norm_eps: number;
}

export interface EngineTensor {
  shape: number[];
  data: Float32Array;
}

/** Ordered name -> tensor map; insertion order defines payload layout. */
export type EngineTensors = Map<string, EngineTensor>;

function sortedJson(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(sortedJson).join(", ")}]`;
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>).sort(([a], [b]) =>
      a < b ? -1 : a > b ? 1 : 0
    );
    return `{${entries.map(([k, v]) => `${JSON.stringify(k)}: ${sortedJson(v)}`).join(", ")}}`;
  }
  return JSON.stringify(value);
}

export function writeContainer(meta: EngineMeta, tensors: EngineTensors): Buffer {
  const desc: Record<string, unknown> = {};
  let offset = 0;
  const chunks: Buffer[] = [];
  for (const [name, t] of tensors) {
    const count = t.shape.reduce((a, b) => a * b, 1);
    if (count !== t.data.length) {
      throw new Error(`container: tensor '${name}' shape/data mismatch`);
    }
    const bytes = Buffer.alloc(count * 4);
    for (let i = 0; i < count; i++) bytes.writeFloatLE(t.data[i], i * 4);
    desc[name] = { dtype: "f32", shape: t.shape, offset, byte_len: bytes.length };
    offset += bytes.length;
    chunks.push(bytes);
  }
  const headerBuf = Buffer.from(sortedJson({ meta, tensors: desc }), "utf-8");
  const front = Buffer.alloc(20);
  MAGIC.copy(front, 0);
  front.writeUInt32LE(FORMAT_VERSION, 8);
  front.writeBigUInt64LE(BigInt(headerBuf.length), 12);
  return Buffer.concat([front, headerBuf, ...chunks]);
}

export interface ParsedContainer {
  meta: EngineMeta;
  tensors: Map<string, { shape: number[]; offset: number; byteLen: number }>;
  payload: Buffer;
}

export function parseContainer(buf: Buffer): ParsedContainer {
  if (buf.length < 20 || !buf.subarray(0, 8).equals(MAGIC)) {
    throw new Error("container: malformed header: bad magic");
  }
  const version = buf.readUInt32LE(8);
  if (version !== FORMAT_VERSION) {
    throw new Error(`container: malformed header: unsupported version ${version}`);
  }
  const headerLen = Number(buf.readBigUInt64LE(12));
  if (20 + headerLen > buf.length) {
    throw new Error("container: malformed header: header extends past file end");
  }
  const header = JSON.parse(buf.subarray(20, 20 + headerLen).toString("utf-8"));
  const payload = buf.subarray(20 + headerLen);
  const tensors = new Map<string, { shape: number[]; offset: number; byteLen: number }>();
  for (const [name, raw] of Object.entries(header.tensors as Record<string, any>)) {
    if (raw.dtype !== "f32") {
      throw new Error(`container: tensor '${name}' has dtype ${raw.dtype}`);
    }
    if (raw.offset + raw.byte_len > payload.length) {
      throw new Error(`container: truncated tensor data for '${name}'`);
    }
    tensors.set(name, { shape: raw.shape, offset: raw.offset, byteLen: raw.byte_len });
  }
  return { meta: header.meta as EngineMeta, tensors, payload };
}

export function readContainerTensor(c: ParsedContainer, name: string): Float32Array {
  const info = c.tensors.get(name);
  if (info === undefined) {
    throw new Error(`container: missing tensor '${name}'`);
  }
  const count = info.byteLen / 4;
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = c.payload.readFloatLE(info.offset + i * 4);
  }
  return out;
}
