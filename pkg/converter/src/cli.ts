/**
 * condensate-convert: export a GPT-2-class checkpoint into the engine
 * weight container.
 *
 *   convert --source DIR --out FILE [--manifest FILE] [--name ID]
 *       DIR holds model.safetensors + config.json (a local HF snapshot).
 *   verify --weights FILE --source DIR [--name ID]
 *       Re-reads FILE and compares every tensor elementwise to the source
 *       (exact zero diff required).
 *   fetch --model gpt2 --dest DIR
 *       Downloads config.json and model.safetensors from the HF hub
 *       (network required; everything else works offline).
 */

import { readFileSync, writeFileSync, mkdirSync } from "node:fs";
import { join } from "node:path";

import { writeContainer } from "./container.js";
import { Gpt2Config, convertGpt2 } from "./gpt2.js";
import { parseSafetensors } from "./safetensors.js";
import { verifyAgainstSource } from "./verify.js";

function arg(argv: string[], name: string): string | undefined {
  const i = argv.indexOf(name);
  return i >= 0 && i + 1 < argv.length ? argv[i + 1] : undefined;
}

function loadSource(dir: string) {
  const cfg = JSON.parse(readFileSync(join(dir, "config.json"), "utf-8")) as Gpt2Config;
  const file = parseSafetensors(readFileSync(join(dir, "model.safetensors")));
  return { cfg, file };
}

function cmdConvert(argv: string[]): number {
  const sourceDir = arg(argv, "--source");
  const out = arg(argv, "--out");
  if (!sourceDir || !out) {
    console.error("convert: --source DIR and --out FILE are required");
    return 2;
  }
  const name = arg(argv, "--name") ?? sourceDir;
  const { cfg, file } = loadSource(sourceDir);
  const { meta, tensors, manifest } = convertGpt2(file, cfg, name);
  writeFileSync(out, writeContainer(meta, tensors));
  const manifestPath = arg(argv, "--manifest") ?? out + ".manifest.json";
  writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + "\n");
  console.log(
    `converted ${name}: ${tensors.size} tensors, ` +
      `${meta.n_layers} layers, ${meta.n_heads} heads, head_dim ${meta.head_dim}, ` +
      `vocab ${meta.vocab_size} -> ${out}`
  );
  return 0;
}

function cmdVerify(argv: string[]): number {
  const weights = arg(argv, "--weights");
  const sourceDir = arg(argv, "--source");
  if (!weights || !sourceDir) {
    console.error("verify: --weights FILE and --source DIR are required");
    return 2;
  }
  const { cfg, file } = loadSource(sourceDir);
  const result = verifyAgainstSource(
    readFileSync(weights), file, cfg, arg(argv, "--name") ?? sourceDir
  );
  if (result.ok) {
    console.log(`verify OK: ${result.tensorsChecked} tensors, max abs diff = 0`);
    return 0;
  }
  for (const f of result.failures) {
    if (f.index >= 0) {
      console.error(
        `verify FAIL: tensor '${f.tensor}' index ${f.index}: ` +
          `file ${f.got} != source ${f.want}`
      );
    } else if (f.index === -1) {
      console.error(`verify FAIL: tensor '${f.tensor}' missing from weight file`);
    } else {
      console.error(`verify FAIL: unexpected tensor '${f.tensor}' in weight file`);
    }
  }
  return 1;
}

async function cmdFetch(argv: string[]): Promise<number> {
  const model = arg(argv, "--model") ?? "gpt2";
  const dest = arg(argv, "--dest");
  if (!dest) {
    console.error("fetch: --dest DIR is required");
    return 2;
  }
  mkdirSync(dest, { recursive: true });
  for (const fname of ["config.json", "model.safetensors"]) {
    const url = `https://huggingface.co/${model}/resolve/main/${fname}`;
    const res = await fetch(url);
    if (!res.ok) {
      console.error(`fetch: ${url}: ${res.status} ${res.statusText}`);
      return 1;
    }
    writeFileSync(join(dest, fname), Buffer.from(await res.arrayBuffer()));
    console.log(`fetched ${fname}`);
  }
  return 0;
}

async function main(): Promise<number> {
  const [cmd, ...rest] = process.argv.slice(2);
  try {
    switch (cmd) {
      case "convert":
        return cmdConvert(rest);
      case "verify":
        return cmdVerify(rest);
      case "fetch":
        return await cmdFetch(rest);
      default:
        console.error("usage: condensate-convert {convert|verify|fetch} ...");
        return 2;
    }
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 2;
  }
}

main().then((code) => {
  process.exitCode = code;
});
