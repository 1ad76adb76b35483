/**
 * Vision backbones producing raw (unnormalized) embedding vectors; the
 * downstream engine l2-normalizes.
 *
 * The default "patch-projection" backbone is a deterministic random-feature
 * encoder: bilinear resize to a fixed grid, non-overlapping patches
 * projected through a seeded Gaussian matrix, tanh nonlinearity, mean pool.
 * It needs no weight downloads and is bit-reproducible given its seed,
 * which is what the test fixtures and the interop checks rely on.
 *
 * Pretrained backbones (CLIP/DINO-style) plug in behind the same interface;
 * constructing an identifier this package does not ship raises the
 * "unavailable backbone" error instead of silently substituting.
 */
import { Image } from "./ppm.js";
import { Rng } from "./rng.js";

export interface Backbone {
  readonly identifier: string;
  readonly dim: number;
  embed(img: Image): Float64Array;
}

export class UnavailableBackboneError extends Error {}

export function bilinearResize(img: Image, width: number, height: number): Float64Array {
  // returns RGB float values in [0, 255], row-major
  const out = new Float64Array(width * height * 3);
  const sx = img.width / width;
  const sy = img.height / height;
  for (let y = 0; y < height; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, img.height - 1);
    const y0 = Math.max(0, Math.floor(fy));
    const y1 = Math.min(img.height - 1, y0 + 1);
    const wy = Math.max(0, fy - y0);
    for (let x = 0; x < width; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, img.width - 1);
      const x0 = Math.max(0, Math.floor(fx));
      const x1 = Math.min(img.width - 1, x0 + 1);
      const wx = Math.max(0, fx - x0);
      for (let c = 0; c < 3; c++) {
        const p00 = img.pixels[(y0 * img.width + x0) * 3 + c];
        const p01 = img.pixels[(y0 * img.width + x1) * 3 + c];
        const p10 = img.pixels[(y1 * img.width + x0) * 3 + c];
        const p11 = img.pixels[(y1 * img.width + x1) * 3 + c];
        const top = p00 + (p01 - p00) * wx;
        const bot = p10 + (p11 - p10) * wx;
        out[(y * width + x) * 3 + c] = top + (bot - top) * wy;
      }
    }
  }
  return out;
}

export class PatchProjectionBackbone implements Backbone {
  readonly identifier: string;
  readonly dim: number;
  private readonly grid = 32;
  private readonly patch = 8;
  private readonly projection: Float64Array; // dim x patchValues

  constructor(dim: number, seed: number) {
    this.dim = dim;
    this.identifier = `patch-projection-${this.grid}x${this.grid}p${this.patch}-d${dim}-s${seed}`;
    const patchValues = this.patch * this.patch * 3;
    const rng = new Rng(seed);
    this.projection = new Float64Array(dim * patchValues);
    const scale = 1 / Math.sqrt(patchValues);
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = rng.gaussian() * scale;
    }
  }

  embed(img: Image): Float64Array {
    const g = this.grid;
    const p = this.patch;
    const resized = bilinearResize(img, g, g);
    const patchValues = p * p * 3;
    const perSide = g / p;
    const out = new Float64Array(this.dim);
    const patchBuf = new Float64Array(patchValues);
    for (let py = 0; py < perSide; py++) {
      for (let px = 0; px < perSide; px++) {
        let k = 0;
        for (let y = 0; y < p; y++) {
          const row = ((py * p + y) * g + px * p) * 3;
          for (let i = 0; i < p * 3; i++) {
            patchBuf[k++] = resized[row + i] / 127.5 - 1.0; // [-1, 1]
          }
        }
        for (let j = 0; j < this.dim; j++) {
          let acc = 0;
          const base = j * patchValues;
          for (let i = 0; i < patchValues; i++) {
            acc += this.projection[base + i] * patchBuf[i];
          }
          out[j] += Math.tanh(acc);
        }
      }
    }
    const nPatches = perSide * perSide;
    for (let j = 0; j < this.dim; j++) out[j] /= nPatches;
    return out;
  }
}

export interface BackboneSpec {
  kind: string;
  dim: number;
  seed: number;
}

export function createBackbone(spec: BackboneSpec): Backbone {
  if (spec.kind === "patch-projection") {
    return new PatchProjectionBackbone(spec.dim, spec.seed);
  }
  throw new UnavailableBackboneError(
    `backbone ${JSON.stringify(spec.kind)} is not available in this build; ` +
      `available: patch-projection`,
  );
}
