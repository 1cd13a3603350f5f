/**
 * GPT-2-family checkpoint conversion.
 *
 * HF GPT-2 stores attention and MLP projections in Conv1D layout
 * (weight[in, out], applied as x @ W + b) with the query/key/value
 * projections fused in c_attn; the engine wants separate row-major
 * (out, in) matrices. The manifest records the transform applied to each
 * tensor along with a sha256 of its converted payload.
 */

import { createHash } from "node:crypto";

import { EngineMeta, EngineTensors } from "./container.js";
import { SafetensorsFile, readTensorF32 } from "./safetensors.js";

export interface Gpt2Config {
  n_layer: number;
  n_head: number;
  n_embd: number;
  vocab_size: number;
  n_positions: number;
  n_inner?: number | null;
  layer_norm_epsilon?: number;
  eos_token_id?: number;
}

export interface ManifestEntry {
  source: string;
  transform: "copy" | "transpose" | string;
  shape: number[];
  sha256: string;
}

export interface ConversionManifest {
  source_model: string;
  format_version: number;
  meta: EngineMeta;
  tensors: Record<string, ManifestEntry>;
}

function transpose(data: Float32Array, rows: number, cols: number): Float32Array {
  const out = new Float32Array(data.length);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      out[c * rows + r] = data[r * cols + c];
    }
  }
  return out;
}

function sliceCols(
  data: Float32Array,
  rows: number,
  cols: number,
  begin: number,
  end: number
): Float32Array {
  const width = end - begin;
  const out = new Float32Array(rows * width);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < width; c++) {
      out[r * width + c] = data[r * cols + begin + c];
    }
  }
  return out;
}

function sha256(data: Float32Array): string {
  const buf = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) buf.writeFloatLE(data[i], i * 4);
  return createHash("sha256").update(buf).digest("hex");
}

/** Strip an optional "transformer." prefix so both export styles work. */
function canonical(file: SafetensorsFile): Map<string, string> {
  const map = new Map<string, string>();
  for (const name of file.tensors.keys()) {
    const key = name.startsWith("transformer.") ? name.slice("transformer.".length) : name;
    map.set(key, name);
  }
  return map;
}

export function engineMetaFromConfig(cfg: Gpt2Config): EngineMeta {
  if (!cfg.n_layer || !cfg.n_head || !cfg.n_embd || !cfg.vocab_size) {
    throw new Error("config: missing n_layer/n_head/n_embd/vocab_size");
  }
  if (cfg.n_embd % cfg.n_head !== 0) {
    throw new Error("config: n_embd not divisible by n_head");
  }
  return {
    n_layers: cfg.n_layer,
    n_heads: cfg.n_head,
    n_kv_heads: cfg.n_head,
    head_dim: cfg.n_embd / cfg.n_head,
    model_dim: cfg.n_embd,
    mlp_hidden: cfg.n_inner ?? 4 * cfg.n_embd,
    vocab_size: cfg.vocab_size,
    max_seq: cfg.n_positions,
    rope_enabled: false,
    rope_theta: 10000.0,
    eos_token: cfg.eos_token_id ?? -1,
    norm: "layernorm",
    norm_eps: cfg.layer_norm_epsilon ?? 1e-5,
  };
}

export function convertGpt2(
  file: SafetensorsFile,
  cfg: Gpt2Config,
  sourceName: string
): { meta: EngineMeta; tensors: EngineTensors; manifest: ConversionManifest } {
  const meta = engineMetaFromConfig(cfg);
  const names = canonical(file);
  const D = meta.model_dim;
  const hidden = meta.mlp_hidden;

  const read = (key: string, expected: number[]): Float32Array => {
    const src = names.get(key);
    if (src === undefined) {
      throw new Error(`missing tensor: ${key}`);
    }
    const info = file.tensors.get(src)!;
    if (JSON.stringify(info.shape) !== JSON.stringify(expected)) {
      throw new Error(
        `unexpected shape for ${key}: got [${info.shape}], want [${expected}]`
      );
    }
    return readTensorF32(file, src);
  };

  const tensors: EngineTensors = new Map();
  const manifestTensors: Record<string, ManifestEntry> = {};
  const put = (
    name: string,
    data: Float32Array,
    shape: number[],
    source: string,
    transform: string
  ) => {
    tensors.set(name, { shape, data });
    manifestTensors[name] = { source, transform, shape, sha256: sha256(data) };
  };

  const wte = read("wte.weight", [meta.vocab_size, D]);
  put("embedding", wte, [meta.vocab_size, D], "wte.weight", "copy");
  const wpe = read("wpe.weight", [meta.max_seq, D]);
  put("pos_embedding", wpe, [meta.max_seq, D], "wpe.weight", "copy");

  for (let i = 0; i < meta.n_layers; i++) {
    const p = `h.${i}.`;
    const eng = `layers.${i}.`;
    const caw = read(p + "attn.c_attn.weight", [D, 3 * D]);
    const cab = read(p + "attn.c_attn.bias", [3 * D]);
    put(eng + "w_q", transpose(sliceCols(caw, D, 3 * D, 0, D), D, D), [D, D],
      p + "attn.c_attn.weight", "slice_cols[0:D].T");
    put(eng + "w_k", transpose(sliceCols(caw, D, 3 * D, D, 2 * D), D, D), [D, D],
      p + "attn.c_attn.weight", "slice_cols[D:2D].T");
    put(eng + "w_v", transpose(sliceCols(caw, D, 3 * D, 2 * D, 3 * D), D, D), [D, D],
      p + "attn.c_attn.weight", "slice_cols[2D:3D].T");
    put(eng + "w_o", transpose(read(p + "attn.c_proj.weight", [D, D]), D, D), [D, D],
      p + "attn.c_proj.weight", "transpose");
    put(eng + "mlp_in", transpose(read(p + "mlp.c_fc.weight", [D, hidden]), D, hidden),
      [hidden, D], p + "mlp.c_fc.weight", "transpose");
    put(eng + "mlp_out", transpose(read(p + "mlp.c_proj.weight", [hidden, D]), hidden, D),
      [D, hidden], p + "mlp.c_proj.weight", "transpose");
    put(eng + "norm1", read(p + "ln_1.weight", [D]), [D], p + "ln_1.weight", "copy");
    put(eng + "norm2", read(p + "ln_2.weight", [D]), [D], p + "ln_2.weight", "copy");
    put(eng + "b_q", cab.slice(0, D), [D], p + "attn.c_attn.bias", "slice[0:D]");
    put(eng + "b_k", cab.slice(D, 2 * D), [D], p + "attn.c_attn.bias", "slice[D:2D]");
    put(eng + "b_v", cab.slice(2 * D, 3 * D), [D], p + "attn.c_attn.bias", "slice[2D:3D]");
    put(eng + "b_o", read(p + "attn.c_proj.bias", [D]), [D], p + "attn.c_proj.bias", "copy");
    put(eng + "b_mlp_in", read(p + "mlp.c_fc.bias", [hidden]), [hidden],
      p + "mlp.c_fc.bias", "copy");
    put(eng + "b_mlp_out", read(p + "mlp.c_proj.bias", [D]), [D],
      p + "mlp.c_proj.bias", "copy");
    put(eng + "norm1_bias", read(p + "ln_1.bias", [D]), [D], p + "ln_1.bias", "copy");
    put(eng + "norm2_bias", read(p + "ln_2.bias", [D]), [D], p + "ln_2.bias", "copy");
  }

  put("final_norm", read("ln_f.weight", [D]), [D], "ln_f.weight", "copy");
  put("final_norm_bias", read("ln_f.bias", [D]), [D], "ln_f.bias", "copy");
  // GPT-2 ties the output head to the token embedding
  put("lm_head", wte.slice(), [meta.vocab_size, D], "wte.weight", "copy(tied)");

  const manifest: ConversionManifest = {
    source_model: sourceName,
    format_version: 1,
    meta,
    tensors: manifestTensors,
  };
  return { meta, tensors, manifest };
}
