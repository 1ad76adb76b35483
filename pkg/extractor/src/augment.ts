/**
 * Two-view augmentation: random resized crop, horizontal flip, and
 * brightness/contrast jitter. Parameters are drawn from a caller-supplied
 * RNG in a fixed order, so a content-keyed seed makes views reproducible.
 */
import { Image } from "./ppm.js";
import { Rng } from "./rng.js";

export interface AugmentRecipe {
  minCropScale: number;
  flipProbability: number;
  brightnessJitter: number; // multiplicative range +-
  contrastJitter: number;
}

export const DEFAULT_RECIPE: AugmentRecipe = {
  minCropScale: 0.7,
  flipProbability: 0.5,
  brightnessJitter: 0.2,
  contrastJitter: 0.2,
};

export function crop(img: Image, x0: number, y0: number, w: number, h: number): Image {
  const pixels = new Uint8Array(w * h * 3);
  for (let y = 0; y < h; y++) {
    const src = ((y0 + y) * img.width + x0) * 3;
    pixels.set(img.pixels.subarray(src, src + w * 3), y * w * 3);
  }
  return { width: w, height: h, pixels };
}

export function flipHorizontal(img: Image): Image {
  const { width, height } = img;
  const pixels = new Uint8Array(img.pixels.length);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const src = (y * width + x) * 3;
      const dst = (y * width + (width - 1 - x)) * 3;
      pixels[dst] = img.pixels[src];
      pixels[dst + 1] = img.pixels[src + 1];
      pixels[dst + 2] = img.pixels[src + 2];
    }
  }
  return { width, height, pixels };
}

function clampByte(v: number): number {
  return v < 0 ? 0 : v > 255 ? 255 : Math.round(v);
}

export function jitter(img: Image, brightness: number, contrast: number): Image {
  const pixels = new Uint8Array(img.pixels.length);
  for (let i = 0; i < pixels.length; i++) {
    pixels[i] = clampByte((img.pixels[i] - 128) * contrast * brightness + 128 * brightness);
  }
  return { width: img.width, height: img.height, pixels };
}

/** One augmented view; consumes a fixed number of RNG draws. */
export function augmentView(img: Image, rng: Rng, recipe: AugmentRecipe): Image {
  const scale = rng.uniform(recipe.minCropScale, 1.0);
  const w = Math.max(1, Math.round(img.width * scale));
  const h = Math.max(1, Math.round(img.height * scale));
  const x0 = rng.int(0, img.width - w + 1);
  const y0 = rng.int(0, img.height - h + 1);
  const doFlip = rng.next() < recipe.flipProbability;
  const brightness = rng.uniform(1 - recipe.brightnessJitter, 1 + recipe.brightnessJitter);
  const contrast = rng.uniform(1 - recipe.contrastJitter, 1 + recipe.contrastJitter);

  let out = crop(img, x0, y0, w, h);
  if (doFlip) out = flipHorizontal(out);
  return jitter(out, brightness, contrast);
}
