import * as fs from "fs";
import * as path from "path";

import { InputFormatError, readMmi1 } from "./mmi1";
import { writeRecord } from "./mmec";
import { VisionTextModel } from "./model";

export { InputFormatError };

export interface ExportJob {
  model: VisionTextModel;
  layerOffset: number; // k-th-from-last hidden layer, default 3
  imagesDir: string;
  promptsDir: string;
  outDir: string;
  batchSize: number;
}

export interface ExportSummary {
  written: number;
  tokensPerSample: Record<string, number>;
  hiddenWidth: number;
  layerOffset: number;
}

/** Per-channel min-max rescale into [0, 1]; constant channels map to zero. */
function normalizeChannels(channels: Float64Array[]): void {
  for (const ch of channels) {
    let lo = Infinity;
    let hi = -Infinity;
    for (const v of ch) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    const span = hi - lo;
    for (let i = 0; i < ch.length; i++) {
      ch[i] = span > 0 ? (ch[i] - lo) / span : 0;
    }
  }
}

export function listSampleIds(imagesDir: string): string[] {
  if (!fs.existsSync(imagesDir)) {
    throw new InputFormatError(`images dir not found: ${imagesDir}`);
  }
  return fs.readdirSync(imagesDir)
    .filter((name) => name.endsWith(".mmi"))
    .map((name) => name.slice(0, -4))
    .sort();
}

export function runExport(job: ExportJob): ExportSummary {
  const { model } = job;
  if (job.layerOffset < 1 || job.layerOffset > model.depth) {
    throw new InputFormatError(
      `layer offset ${job.layerOffset} outside [1, ${model.depth}]`);
  }
  const ids = listSampleIds(job.imagesDir);
  if (ids.length === 0) {
    throw new InputFormatError(`no .mmi files in ${job.imagesDir}`);
  }
  fs.mkdirSync(job.outDir, { recursive: true });

  const summary: ExportSummary = {
    written: 0,
    tokensPerSample: {},
    hiddenWidth: model.hiddenWidth,
    layerOffset: job.layerOffset,
  };
  for (let start = 0; start < ids.length; start += job.batchSize) {
    for (const id of ids.slice(start, start + job.batchSize)) {
      const tensor = readMmi1(path.join(job.imagesDir, id + ".mmi"));
      const [c, h, w] = tensor.dims;
      if (c !== 3) {
        throw new InputFormatError(`${id}: expected 3 channels, got ${c}`);
      }
      const promptPath = path.join(job.promptsDir, id + ".txt");
      if (!fs.existsSync(promptPath)) {
        throw new InputFormatError(`${id}: missing prompt file ${promptPath}`);
      }
      const prompt = fs.readFileSync(promptPath, "utf-8");

      const channels = [0, 1, 2].map(
        (i) => tensor.data.slice(i * h * w, (i + 1) * h * w));
      normalizeChannels(channels);

      const states = model.forward(channels, h, w, prompt);
      const hidden = states[states.length - job.layerOffset];
      if (hidden.cols !== model.hiddenWidth) {
        throw new InputFormatError(
          `${id}: hidden width ${hidden.cols} != model d_m ${model.hiddenWidth}`);
      }
      writeRecord(job.outDir, {
        sampleId: id,
        layerOffset: job.layerOffset,
        rows: hidden.rows,
        cols: hidden.cols,
        data: Float32Array.from(hidden.data),
      });
      summary.tokensPerSample[id] = hidden.rows;
      summary.written += 1;
    }
  }
  return summary;
}
