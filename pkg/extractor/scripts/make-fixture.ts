/**
 * Generates the 8-image, 2-class PPM fixture used by the tests: class 0 is
 * horizontal stripes, class 1 vertical stripes, with per-image phase and
 * color variation. Deterministic.
 *
 * usage: node dist/scripts/make-fixture.js OUT_DIR
 */
import { mkdirSync, writeFileSync } from "fs";
import { join } from "path";
import { pathToFileURL } from "url";
import { Image, saveImage } from "../src/ppm.js";
import { Rng } from "../src/rng.js";

export function stripeImage(vertical: boolean, phase: number, rng: Rng, size = 48): Image {
  const pixels = new Uint8Array(size * size * 3);
  const base = [rng.int(100, 255), rng.int(100, 255), rng.int(100, 255)];
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const t = vertical ? x : y;
      const on = Math.floor((t + phase) / 6) % 2 === 0;
      const i = (y * size + x) * 3;
      for (let c = 0; c < 3; c++) {
        const noise = rng.int(-12, 13);
        pixels[i + c] = Math.min(255, Math.max(0, (on ? base[c] : 40) + noise));
      }
    }
  }
  return { width: size, height: size, pixels };
}

export function makeFixture(outDir: string): { path: string; label: number }[] {
  mkdirSync(outDir, { recursive: true });
  const rng = new Rng(424242);
  const images: { path: string; label: number }[] = [];
  for (let i = 0; i < 8; i++) {
    const label = i < 4 ? 0 : 1;
    const img = stripeImage(label === 1, rng.int(0, 6), rng);
    const path = join(outDir, `img_${i}_class${label}.ppm`);
    saveImage(path, img);
    images.push({ path, label });
  }
  const manifest = {
    datasetName: "stripes-fixture",
    images,
    knownClasses: [0],
    labeledFraction: 0.5,
    seed: 11,
    backbone: { kind: "patch-projection", dim: 64, seed: 7 },
  };
  writeFileSync(join(outDir, "manifest.json"), JSON.stringify(manifest, null, 2) + "\n");
  return images;
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  const outArg = process.argv[2];
  if (!outArg) {
    console.error("usage: make-fixture OUT_DIR");
    process.exit(2);
  }
  makeFixture(outArg);
  console.log(`fixture written to ${outArg}`);
}
