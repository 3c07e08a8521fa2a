/** Vision-text models that expose per-layer hidden states.
 *
 * The exporter only needs three things from a model: its expected image
 * resolution, its hidden width, and a forward pass returning the hidden
 * state sequence after every transformer layer. `tiny-sim` is a built-in
 * seeded model with exactly that contract, usable offline and in tests;
 * pretrained checkpoints would be loaded through an optional runtime that
 * is not bundled here.
 */

import {
  addInPlace, bilinearResize, layerNormRows, Mat, matmul, mulberry32,
  reluInPlace, softmaxRowsInPlace, uniformMat, zeros,
} from "./math";

export class ModelLoadError extends Error {}

export interface VisionTextModel {
  readonly id: string;
  readonly hiddenWidth: number; // d_m
  readonly depth: number; // number of transformer layers
  readonly inputResolution: number; // expected square image side
  /** Returns one (S, d_m) hidden-state matrix per layer, shallow to deep. */
  forward(imageChannels: Float64Array[], height: number, width: number,
          prompt: string): Mat[];
}

export const DEFAULT_MODEL_ID = "Qwen/Qwen2-VL-2B-Instruct";

interface TinyConfig {
  dm: number;
  depth: number;
  heads: number;
  patch: number;
  resolution: number;
  maxPromptBytes: number;
}

const TINY_DEFAULTS: TinyConfig = {
  dm: 32,
  depth: 6,
  heads: 4,
  patch: 8,
  resolution: 32,
  maxPromptBytes: 192,
};

/** Small seeded vision-text transformer; weights are a pure function of the
 *  seed, so exports are reproducible run to run. */
export class TinyDeterministicVLM implements VisionTextModel {
  readonly id: string;
  readonly hiddenWidth: number;
  readonly depth: number;
  readonly inputResolution: number;
  private readonly cfg: TinyConfig;
  private readonly patchEmbed: Mat; // (3*patch*patch, dm)
  private readonly byteEmbed: Mat; // (257, dm); row 256 is the lead token
  private readonly posEmbed: Mat;
  private readonly layers: { wq: Mat; wk: Mat; wv: Mat; wo: Mat; w1: Mat; w2: Mat }[];

  constructor(seed = 0, cfg: Partial<TinyConfig> = {}) {
    this.cfg = { ...TINY_DEFAULTS, ...cfg };
    const { dm, depth, patch, resolution, maxPromptBytes } = this.cfg;
    this.id = `tiny-sim:${seed}`;
    this.hiddenWidth = dm;
    this.depth = depth;
    this.inputResolution = resolution;
    const rand = mulberry32(0x51ed0 ^ seed);
    const patchDim = 3 * patch * patch;
    this.patchEmbed = uniformMat(patchDim, dm, 1 / Math.sqrt(patchDim), rand);
    this.byteEmbed = uniformMat(257, dm, 0.5, rand);
    const visTokens = (resolution / patch) * (resolution / patch);
    this.posEmbed = uniformMat(1 + visTokens + maxPromptBytes, dm, 0.1, rand);
    this.layers = [];
    const lim = 1 / Math.sqrt(dm);
    for (let l = 0; l < depth; l++) {
      this.layers.push({
        wq: uniformMat(dm, dm, lim, rand),
        wk: uniformMat(dm, dm, lim, rand),
        wv: uniformMat(dm, dm, lim, rand),
        wo: uniformMat(dm, dm, lim, rand),
        w1: uniformMat(dm, 4 * dm, lim, rand),
        w2: uniformMat(4 * dm, dm, 1 / Math.sqrt(4 * dm), rand),
      });
    }
  }

  private tokenize(imageChannels: Float64Array[], height: number, width: number,
                   prompt: string): Mat {
    const { dm, patch, resolution, maxPromptBytes } = this.cfg;
    const resized = imageChannels.map((ch) =>
      bilinearResize(ch, height, width, resolution, resolution));
    const perSide = resolution / patch;
    const visTokens = perSide * perSide;
    const promptBytes = Buffer.from(prompt, "utf-8").subarray(0, maxPromptBytes);
    const s = 1 + visTokens + promptBytes.length;
    const tokens = zeros(s, dm);

    // lead token
    for (let j = 0; j < dm; j++) tokens.data[j] = this.byteEmbed.data[256 * dm + j];
    // vision tokens: flattened 3x(patch x patch) pixels through the patch embed
    const patchDim = 3 * patch * patch;
    const pixels = new Float64Array(patchDim);
    for (let py = 0; py < perSide; py++) {
      for (let px = 0; px < perSide; px++) {
        let k = 0;
        for (let c = 0; c < 3; c++) {
          for (let dy = 0; dy < patch; dy++) {
            for (let dx = 0; dx < patch; dx++) {
              pixels[k++] = resized[c][(py * patch + dy) * resolution + (px * patch + dx)];
            }
          }
        }
        const row = 1 + py * perSide + px;
        for (let j = 0; j < dm; j++) {
          let acc = 0;
          for (let d = 0; d < patchDim; d++) {
            acc += pixels[d] * this.patchEmbed.data[d * dm + j];
          }
          tokens.data[row * dm + j] = acc;
        }
      }
    }
    // prompt tokens: byte embeddings
    for (let i = 0; i < promptBytes.length; i++) {
      const row = 1 + visTokens + i;
      const byte = promptBytes[i];
      for (let j = 0; j < dm; j++) {
        tokens.data[row * dm + j] = this.byteEmbed.data[byte * dm + j];
      }
    }
    // positions
    for (let i = 0; i < s; i++) {
      for (let j = 0; j < dm; j++) {
        tokens.data[i * dm + j] += this.posEmbed.data[i * dm + j];
      }
    }
    return tokens;
  }

  private attention(x: Mat, layer: (typeof this.layers)[number]): Mat {
    const { dm, heads } = this.cfg;
    const hd = dm / heads;
    const q = matmul(x, layer.wq);
    const k = matmul(x, layer.wk);
    const v = matmul(x, layer.wv);
    const out = zeros(x.rows, dm);
    const scale = 1 / Math.sqrt(hd);
    for (let h = 0; h < heads; h++) {
      const off = h * hd;
      const logits = zeros(x.rows, x.rows);
      for (let i = 0; i < x.rows; i++) {
        for (let j = 0; j < x.rows; j++) {
          let acc = 0;
          for (let d = 0; d < hd; d++) {
            acc += q.data[i * dm + off + d] * k.data[j * dm + off + d];
          }
          logits.data[i * x.rows + j] = acc * scale;
        }
      }
      softmaxRowsInPlace(logits);
      for (let i = 0; i < x.rows; i++) {
        for (let j = 0; j < x.rows; j++) {
          const p = logits.data[i * x.rows + j];
          for (let d = 0; d < hd; d++) {
            out.data[i * dm + off + d] += p * v.data[j * dm + off + d];
          }
        }
      }
    }
    return matmul(out, layer.wo);
  }

  forward(imageChannels: Float64Array[], height: number, width: number,
          prompt: string): Mat[] {
    if (imageChannels.length !== 3) {
      throw new ModelLoadError("expected a three-channel image");
    }
    let x = this.tokenize(imageChannels, height, width, prompt);
    const states: Mat[] = [];
    for (const layer of this.layers) {
      addInPlace(x, this.attention(layerNormRows(x), layer));
      const ff = matmul(layerNormRows(x), layer.w1);
      reluInPlace(ff);
      addInPlace(x, matmul(ff, layer.w2));
      states.push({ rows: x.rows, cols: x.cols, data: x.data.slice() });
    }
    return states;
  }
}

/** Resolve a model identifier. `tiny-sim[:seed]` is built in; anything else
 *  names a pretrained checkpoint that needs a runtime this package does not
 *  vendor, so it raises ModelLoadError with a pointer. */
export function loadModel(id: string): VisionTextModel {
  if (id.startsWith("tiny-sim")) {
    const seedPart = id.includes(":") ? Number(id.split(":")[1]) : 0;
    if (!Number.isFinite(seedPart)) {
      throw new ModelLoadError(`bad tiny-sim seed in ${id}`);
    }
    return new TinyDeterministicVLM(seedPart);
  }
  throw new ModelLoadError(
    `cannot load ${id}: no inference runtime bundled; install one and wire it ` +
    `through the VisionTextModel interface, or use --model tiny-sim`);
}
