/**
 * Exact verification: re-read an engine weight file and compare every
 * tensor elementwise against the freshly reconverted source. Any nonzero
 * difference fails, reporting the tensor and flat index.
 */

import { createHash } from "node:crypto";

import { parseContainer, readContainerTensor } from "./container.js";
import { ConversionManifest, Gpt2Config, convertGpt2 } from "./gpt2.js";
import { SafetensorsFile } from "./safetensors.js";

export interface VerifyResult {
  ok: boolean;
  tensorsChecked: number;
  failures: { tensor: string; index: number; got: number; want: number }[];
}

export function verifyAgainstSource(
  containerBytes: Buffer,
  source: SafetensorsFile,
  cfg: Gpt2Config,
  sourceName: string
): VerifyResult {
  const parsed = parseContainer(containerBytes);
  const { tensors: expected } = convertGpt2(source, cfg, sourceName);
  const failures: VerifyResult["failures"] = [];
  let checked = 0;
  for (const [name, want] of expected) {
    const info = parsed.tensors.get(name);
    if (info === undefined) {
      failures.push({ tensor: name, index: -1, got: NaN, want: NaN });
      continue;
    }
    if (JSON.stringify(info.shape) !== JSON.stringify(want.shape)) {
      throw new Error(
        `shape mismatch for tensor '${name}': file [${info.shape}] vs source [${want.shape}]`
      );
    }
    const got = readContainerTensor(parsed, name);
    for (let i = 0; i < want.data.length; i++) {
      // bit-level comparison; NaN payloads would also differ via Object.is
      if (!Object.is(got[i], want.data[i])) {
        failures.push({ tensor: name, index: i, got: got[i], want: want.data[i] });
        break;
      }
    }
    checked += 1;
  }
  for (const name of parsed.tensors.keys()) {
    if (!expected.has(name)) {
      failures.push({ tensor: name, index: -2, got: NaN, want: NaN });
    }
  }
  return { ok: failures.length === 0, tensorsChecked: checked, failures };
}

export function verifyManifest(
  containerBytes: Buffer,
  manifest: ConversionManifest
): VerifyResult {
  const parsed = parseContainer(containerBytes);
  const failures: VerifyResult["failures"] = [];
  let checked = 0;
  for (const [name, entry] of Object.entries(manifest.tensors)) {
    const info = parsed.tensors.get(name);
    if (info === undefined) {
      failures.push({ tensor: name, index: -1, got: NaN, want: NaN });
      continue;
    }
    const bytes = parsed.payload.subarray(info.offset, info.offset + info.byteLen);
    const digest = createHash("sha256").update(bytes).digest("hex");
    if (digest !== entry.sha256) {
      failures.push({ tensor: name, index: -3, got: NaN, want: NaN });
    }
    checked += 1;
  }
  return { ok: failures.length === 0, tensorsChecked: checked, failures };
}
