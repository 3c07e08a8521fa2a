#!/usr/bin/env node
/** Export per-layer hidden states over MMI1 images + prompts into MMEC caches.
 *
 *   mmists-export --images imgs/ --prompts prompts/ --out cache/ \
 *                 --model tiny-sim --layer-offset 3 --batch 8
 */

import { runExport } from "./exporter";
import { DEFAULT_MODEL_ID, loadModel } from "./model";

interface CliArgs {
  model: string;
  layerOffset: number;
  images: string;
  prompts: string;
  out: string;
  batch: number;
}

export function parseArgs(argv: string[]): CliArgs {
  const args: CliArgs = {
    model: DEFAULT_MODEL_ID,
    layerOffset: 3,
    images: "",
    prompts: "",
    out: "",
    batch: 8,
  };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      i += 1;
      if (i >= argv.length) throw new Error(`${flag} needs a value`);
      return argv[i];
    };
    switch (flag) {
      case "--model": args.model = next(); break;
      case "--layer-offset": args.layerOffset = Number(next()); break;
      case "--images": args.images = next(); break;
      case "--prompts": args.prompts = next(); break;
      case "--out": args.out = next(); break;
      case "--batch": args.batch = Number(next()); break;
      case "--help":
      case "-h":
        console.log("usage: mmists-export --images DIR --prompts DIR --out DIR "
          + "[--model ID] [--layer-offset K] [--batch N]");
        process.exit(0);
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  for (const key of ["images", "prompts", "out"] as const) {
    if (!args[key]) throw new Error(`--${key} is required`);
  }
  if (!Number.isInteger(args.layerOffset) || args.layerOffset < 1) {
    throw new Error("--layer-offset must be a positive integer");
  }
  if (!Number.isInteger(args.batch) || args.batch < 1) {
    throw new Error("--batch must be a positive integer");
  }
  return args;
}

export function main(argv: string[]): number {
  try {
    const args = parseArgs(argv);
    const summary = runExport({
      model: loadModel(args.model),
      layerOffset: args.layerOffset,
      imagesDir: args.images,
      promptsDir: args.prompts,
      outDir: args.out,
      batchSize: args.batch,
    });
    console.log(JSON.stringify({
      written: summary.written,
      d_m: summary.hiddenWidth,
      layer_offset: summary.layerOffset,
    }, null, 2));
    return 0;
  } catch (err) {
    const name = err instanceof Error ? err.constructor.name : "Error";
    const msg = err instanceof Error ? err.message : String(err);
    console.error(`error:${name}:${msg.replace(/\n/g, " ")}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
