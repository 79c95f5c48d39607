/**
 * Builtin handler: rule-based artifact segmentation and pen cleaning.
 *
 * The arithmetic is deliberately restricted to exact integer operations and
 * single IEEE-754 divisions so the output is byte-identical to an
 * independent implementation of the same rules: integer luma, an integer
 * 4-neighbor Laplacian with replicated borders, integer 9x9 window sums
 * (the blur test reduces to an integer comparison), and HSL terms computed
 * as one division each.
 *
 * Labels: 0 background, 1 qualified tissue, 2 fold, 3 blur.
 */

const BG_LIGHTNESS = 0.88;
const BG_SATURATION = 0.12;
const FOLD_SATURATION = 0.55;
const FOLD_LIGHTNESS = 0.45;
const BLUR_VARIANCE = 25.0;
const BLUR_WINDOW = 9;

const PEN_DARK_MAX = 60;
const PEN_DIFF_MIN = 50;
const PEN_CHANNEL_MIN = 100;

function gray8(rgb: Buffer, idx: number): number {
  const r = rgb[idx * 3];
  const g = rgb[idx * 3 + 1];
  const b = rgb[idx * 3 + 2];
  return Math.floor((299 * r + 587 * g + 114 * b + 500) / 1000);
}

/** n^2 * local variance of the grayscale Laplacian, exact integers. */
function laplacianWindowStat(rgb: Buffer, w: number, h: number): Float64Array {
  const gray = new Int32Array(w * h);
  for (let i = 0; i < w * h; i++) gray[i] = gray8(rgb, i);

  const at = (y: number, x: number): number => {
    const yy = y < 0 ? 0 : y >= h ? h - 1 : y;
    const xx = x < 0 ? 0 : x >= w ? w - 1 : x;
    return gray[yy * w + xx];
  };

  const lap = new Int32Array(w * h);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      lap[y * w + x] =
        at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) -
        4 * gray[y * w + x];
    }
  }

  const half = (BLUR_WINDOW - 1) / 2;
  const pw = w + 2 * half;
  const ph = h + 2 * half;
  const lapAt = (y: number, x: number): number => {
    const yy = y < 0 ? 0 : y >= h ? h - 1 : y;
    const xx = x < 0 ? 0 : x >= w ? w - 1 : x;
    return lap[yy * w + xx];
  };

  // integral images over the padded Laplacian and its square; values stay
  // far below 2^53 so doubles hold them exactly
  const cs1 = new Float64Array((ph + 1) * (pw + 1));
  const cs2 = new Float64Array((ph + 1) * (pw + 1));
  for (let y = 0; y < ph; y++) {
    let row1 = 0;
    let row2 = 0;
    for (let x = 0; x < pw; x++) {
      const v = lapAt(y - half, x - half);
      row1 += v;
      row2 += v * v;
      cs1[(y + 1) * (pw + 1) + (x + 1)] = cs1[y * (pw + 1) + (x + 1)] + row1;
      cs2[(y + 1) * (pw + 1) + (x + 1)] = cs2[y * (pw + 1) + (x + 1)] + row2;
    }
  }

  const n = BLUR_WINDOW * BLUR_WINDOW;
  const out = new Float64Array(w * h);
  const win = BLUR_WINDOW;
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const y0 = y;
      const x0 = x;
      const s1 =
        cs1[(y0 + win) * (pw + 1) + (x0 + win)] - cs1[y0 * (pw + 1) + (x0 + win)] -
        cs1[(y0 + win) * (pw + 1) + x0] + cs1[y0 * (pw + 1) + x0];
      const s2 =
        cs2[(y0 + win) * (pw + 1) + (x0 + win)] - cs2[y0 * (pw + 1) + (x0 + win)] -
        cs2[(y0 + win) * (pw + 1) + x0] + cs2[y0 * (pw + 1) + x0];
      out[y * w + x] = n * s2 - s1 * s1;
    }
  }
  return out;
}

export function segmentTile(rgb: Buffer, width: number, height: number): Buffer {
  const stat = laplacianWindowStat(rgb, width, height);
  const n = BLUR_WINDOW * BLUR_WINDOW;
  const blurCutoff = BLUR_VARIANCE * (n * n);
  const labels = Buffer.alloc(width * height, 1);
  for (let i = 0; i < width * height; i++) {
    const r = rgb[i * 3];
    const g = rgb[i * 3 + 1];
    const b = rgb[i * 3 + 2];
    const mx = Math.max(r, g, b);
    const mn = Math.min(r, g, b);
    const total = mx + mn;
    const lightness = total / 510.0;
    let saturation: number;
    if (mx === mn) {
      saturation = 0.0;
    } else {
      const denom = total <= 255 ? total : 510 - total;
      saturation = (mx - mn) / Math.max(denom, 1);
    }
    if (lightness > BG_LIGHTNESS && saturation < BG_SATURATION) {
      labels[i] = 0;
    } else if (saturation > FOLD_SATURATION && lightness < FOLD_LIGHTNESS) {
      labels[i] = 2;
    } else if (stat[i] < blurCutoff) {
      labels[i] = 3;
    }
  }
  return labels;
}

function penMask(rgb: Buffer, count: number): Uint8Array {
  const mask = new Uint8Array(count);
  for (let i = 0; i < count; i++) {
    const r = rgb[i * 3];
    const g = rgb[i * 3 + 1];
    const b = rgb[i * 3 + 2];
    if (Math.max(r, g, b) < PEN_DARK_MAX) mask[i] = 1;
    else if (r - Math.max(g, b) > PEN_DIFF_MIN && r > PEN_CHANNEL_MIN) mask[i] = 1;
    else if (g - Math.max(r, b) > PEN_DIFF_MIN && g > PEN_CHANNEL_MIN) mask[i] = 1;
    else if (b - Math.max(r, g) > PEN_DIFF_MIN && b > PEN_CHANNEL_MIN) mask[i] = 1;
  }
  return mask;
}

/** Exact Chebyshev distance to the nearest zero pixel (two-pass chamfer). */
function chessboardDistance(mask: Uint8Array, w: number, h: number): Int32Array {
  const INF = w + h + 2;
  const dist = new Int32Array(w * h);
  for (let i = 0; i < w * h; i++) dist[i] = mask[i] ? INF : 0;
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const i = y * w + x;
      if (dist[i] === 0) continue;
      let best = dist[i];
      if (x > 0) best = Math.min(best, dist[i - 1] + 1);
      if (y > 0) {
        best = Math.min(best, dist[i - w] + 1);
        if (x > 0) best = Math.min(best, dist[i - w - 1] + 1);
        if (x < w - 1) best = Math.min(best, dist[i - w + 1] + 1);
      }
      dist[i] = best;
    }
  }
  for (let y = h - 1; y >= 0; y--) {
    for (let x = w - 1; x >= 0; x--) {
      const i = y * w + x;
      if (dist[i] === 0) continue;
      let best = dist[i];
      if (x < w - 1) best = Math.min(best, dist[i + 1] + 1);
      if (y < h - 1) {
        best = Math.min(best, dist[i + w] + 1);
        if (x < w - 1) best = Math.min(best, dist[i + w + 1] + 1);
        if (x > 0) best = Math.min(best, dist[i + w - 1] + 1);
      }
      dist[i] = best;
    }
  }
  return dist;
}

/**
 * Replace pen pixels by the round-half-up mean of non-pen pixels inside the
 * smallest centered window containing any (window radius = Chebyshev
 * distance to the nearest non-pen pixel). An all-pen tile becomes white, and
 * a final pass whitens anything still matching a pen rule.
 */
export function cleanTile(rgb: Buffer, width: number, height: number): Buffer {
  const count = width * height;
  const pen = penMask(rgb, count);
  let anyPen = false;
  let allPen = true;
  for (let i = 0; i < count; i++) {
    if (pen[i]) anyPen = true;
    else allPen = false;
  }
  const out = Buffer.from(rgb);
  if (!anyPen) return out;
  if (allPen) {
    out.fill(255);
    return out;
  }

  // integral images of the non-pen indicator and non-pen channel sums
  const stride = width + 1;
  const countInt = new Float64Array((height + 1) * stride);
  const chanInt = [
    new Float64Array((height + 1) * stride),
    new Float64Array((height + 1) * stride),
    new Float64Array((height + 1) * stride),
  ];
  for (let y = 0; y < height; y++) {
    let rowCount = 0;
    const rowChan = [0, 0, 0];
    for (let x = 0; x < width; x++) {
      const i = y * width + x;
      if (!pen[i]) {
        rowCount += 1;
        rowChan[0] += rgb[i * 3];
        rowChan[1] += rgb[i * 3 + 1];
        rowChan[2] += rgb[i * 3 + 2];
      }
      countInt[(y + 1) * stride + (x + 1)] = countInt[y * stride + (x + 1)] + rowCount;
      for (let c = 0; c < 3; c++) {
        chanInt[c][(y + 1) * stride + (x + 1)] =
          chanInt[c][y * stride + (x + 1)] + rowChan[c];
      }
    }
  }
  const windowSum = (arr: Float64Array, y0: number, y1: number,
                     x0: number, x1: number): number =>
    arr[y1 * stride + x1] - arr[y0 * stride + x1] -
    arr[y1 * stride + x0] + arr[y0 * stride + x0];

  const dist = chessboardDistance(pen, width, height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = y * width + x;
      if (!pen[i]) continue;
      const r = dist[i];
      const y0 = Math.max(y - r, 0);
      const y1 = Math.min(y + r + 1, height);
      const x0 = Math.max(x - r, 0);
      const x1 = Math.min(x + r + 1, width);
      const n = windowSum(countInt, y0, y1, x0, x1);
      for (let c = 0; c < 3; c++) {
        const s = windowSum(chanInt[c], y0, y1, x0, x1);
        out[i * 3 + c] = Math.floor((2 * s + n) / (2 * n));
      }
    }
  }

  const still = penMask(out, count);
  for (let i = 0; i < count; i++) {
    if (still[i]) {
      out[i * 3] = 255;
      out[i * 3 + 1] = 255;
      out[i * 3 + 2] = 255;
    }
  }
  return out;
}

export interface Handler {
  segment(rgb: Buffer, width: number, height: number): Buffer;
  clean(rgb: Buffer, width: number, height: number): Buffer;
}

export const builtinHandler: Handler = {
  segment: segmentTile,
  clean: cleanTile,
};
