/** Small float64 matrix helpers; sequential loops keep runs reproducible. */

export interface Mat {
  rows: number;
  cols: number;
  data: Float64Array; // row-major
}

export function zeros(rows: number, cols: number): Mat {
  return { rows, cols, data: new Float64Array(rows * cols) };
}

/** Deterministic 32-bit PRNG (mulberry32); integer ops only, so exact. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function uniformMat(rows: number, cols: number, limit: number,
                           rand: () => number): Mat {
  const m = zeros(rows, cols);
  for (let i = 0; i < m.data.length; i++) {
    m.data[i] = (2 * rand() - 1) * limit;
  }
  return m;
}

export function matmul(a: Mat, b: Mat): Mat {
  if (a.cols !== b.rows) {
    throw new Error(`matmul ${a.rows}x${a.cols} @ ${b.rows}x${b.cols}`);
  }
  const out = zeros(a.rows, b.cols);
  for (let i = 0; i < a.rows; i++) {
    for (let k = 0; k < a.cols; k++) {
      const av = a.data[i * a.cols + k];
      if (av === 0) continue;
      for (let j = 0; j < b.cols; j++) {
        out.data[i * b.cols + j] += av * b.data[k * b.cols + j];
      }
    }
  }
  return out;
}

export function addInPlace(a: Mat, b: Mat): void {
  for (let i = 0; i < a.data.length; i++) a.data[i] += b.data[i];
}

export function layerNormRows(x: Mat, eps = 1e-5): Mat {
  const out = zeros(x.rows, x.cols);
  for (let i = 0; i < x.rows; i++) {
    let mean = 0;
    for (let j = 0; j < x.cols; j++) mean += x.data[i * x.cols + j];
    mean /= x.cols;
    let varg = 0;
    for (let j = 0; j < x.cols; j++) {
      const d = x.data[i * x.cols + j] - mean;
      varg += d * d;
    }
    varg /= x.cols;
    const inv = 1 / Math.sqrt(varg + eps);
    for (let j = 0; j < x.cols; j++) {
      out.data[i * x.cols + j] = (x.data[i * x.cols + j] - mean) * inv;
    }
  }
  return out;
}

export function softmaxRowsInPlace(x: Mat): void {
  for (let i = 0; i < x.rows; i++) {
    let mx = -Infinity;
    for (let j = 0; j < x.cols; j++) mx = Math.max(mx, x.data[i * x.cols + j]);
    let sum = 0;
    for (let j = 0; j < x.cols; j++) {
      const e = Math.exp(x.data[i * x.cols + j] - mx);
      x.data[i * x.cols + j] = e;
      sum += e;
    }
    for (let j = 0; j < x.cols; j++) x.data[i * x.cols + j] /= sum;
  }
}

export function reluInPlace(x: Mat): void {
  for (let i = 0; i < x.data.length; i++) {
    if (x.data[i] < 0) x.data[i] = 0;
  }
}

/** Align-corners bilinear resize of one (h, w) channel to (outH, outW). */
export function bilinearResize(src: Float64Array, h: number, w: number,
                               outH: number, outW: number): Float64Array {
  const out = new Float64Array(outH * outW);
  for (let i = 0; i < outH; i++) {
    const y = outH > 1 ? (i * (h - 1)) / (outH - 1) : 0;
    const y0 = Math.min(Math.floor(y), h - 1);
    const y1 = Math.min(y0 + 1, h - 1);
    const fy = y - y0;
    for (let j = 0; j < outW; j++) {
      const x = outW > 1 ? (j * (w - 1)) / (outW - 1) : 0;
      const x0 = Math.min(Math.floor(x), w - 1);
      const x1 = Math.min(x0 + 1, w - 1);
      const fx = x - x0;
      out[i * outW + j] =
        src[y0 * w + x0] * (1 - fy) * (1 - fx) +
        src[y0 * w + x1] * (1 - fy) * fx +
        src[y1 * w + x0] * fy * (1 - fx) +
        src[y1 * w + x1] * fy * fx;
    }
  }
  return out;
}
