/** Deterministic tiny GPT-2-shaped checkpoint fixtures. */

import { writeSafetensors } from "../src/safetensors.js";
import { Gpt2Config } from "../src/gpt2.js";

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randTensor(rng: () => number, shape: number[]): Float32Array {
  const n = shape.reduce((a, b) => a * b, 1);
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) out[i] = Math.fround((rng() - 0.5) * 0.2);
  return out;
}

export const TINY_CONFIG: Gpt2Config = {
  n_layer: 2,
  n_head: 2,
  n_embd: 16,
  vocab_size: 96,
  n_positions: 64,
  layer_norm_epsilon: 1e-5,
  eos_token_id: 95,
};

export function tinyCheckpoint(
  seed = 7,
  prefix = ""
): { config: Gpt2Config; bytes: Buffer } {
  const cfg = TINY_CONFIG;
  const D = cfg.n_embd;
  const H4 = 4 * D;
  const rng = mulberry32(seed);
  const tensors = new Map<string, { dtype: "F32"; shape: number[]; data: Float32Array }>();
  const add = (name: string, shape: number[]) =>
    tensors.set(prefix + name, { dtype: "F32", shape, data: randTensor(rng, shape) });

  add("wte.weight", [cfg.vocab_size, D]);
  add("wpe.weight", [cfg.n_positions, D]);
  for (let i = 0; i < cfg.n_layer; i++) {
    add(`h.${i}.ln_1.weight`, [D]);
    add(`h.${i}.ln_1.bias`, [D]);
    add(`h.${i}.attn.c_attn.weight`, [D, 3 * D]);
    add(`h.${i}.attn.c_attn.bias`, [3 * D]);
    add(`h.${i}.attn.c_proj.weight`, [D, D]);
    add(`h.${i}.attn.c_proj.bias`, [D]);
    add(`h.${i}.ln_2.weight`, [D]);
    add(`h.${i}.ln_2.bias`, [D]);
    add(`h.${i}.mlp.c_fc.weight`, [D, H4]);
    add(`h.${i}.mlp.c_fc.bias`, [H4]);
    add(`h.${i}.mlp.c_proj.weight`, [H4, D]);
    add(`h.${i}.mlp.c_proj.bias`, [D]);
  }
  add("ln_f.weight", [D]);
  add("ln_f.bias", [D]);
  return { config: cfg, bytes: writeSafetensors(tensors) };
}
