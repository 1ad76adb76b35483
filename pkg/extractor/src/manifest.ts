/**
 * Extraction manifest: what to embed, with which backbone, and how to split
 * into a labeled support set and an unlabeled query stream.
 */
import { readFileSync } from "fs";
import { AugmentRecipe, DEFAULT_RECIPE } from "./augment.js";
import { BackboneSpec } from "./backbone.js";

export interface ManifestImage {
  path: string;
  label: number;
}

export interface ExtractionManifest {
  datasetName: string;
  backbone: BackboneSpec;
  images: ManifestImage[];
  /** Classes available during training; all others are novel at test time. */
  knownClasses: number[];
  /** Fraction of each known class that forms the labeled set (default 0.5). */
  labeledFraction: number;
  seed: number;
  recipe: AugmentRecipe;
}

const DEFAULTS = {
  backbone: { kind: "patch-projection", dim: 64, seed: 7 } satisfies BackboneSpec,
  labeledFraction: 0.5,
  seed: 0,
};

export function loadManifest(path: string): ExtractionManifest {
  const raw = JSON.parse(readFileSync(path, "utf-8"));
  return validateManifest(raw);
}

export function validateManifest(raw: any): ExtractionManifest {
  if (!raw || typeof raw !== "object") throw new Error("manifest must be a JSON object");
  if (!Array.isArray(raw.images) || raw.images.length === 0) {
    throw new Error("manifest.images must be a nonempty array of {path, label}");
  }
  for (const [i, img] of raw.images.entries()) {
    if (typeof img.path !== "string" || !Number.isInteger(img.label)) {
      throw new Error(`manifest.images[${i}] needs a string path and integer label`);
    }
  }
  if (!Array.isArray(raw.knownClasses) || raw.knownClasses.length === 0) {
    throw new Error("manifest.knownClasses must be a nonempty array of class labels");
  }
  const labels = new Set(raw.images.map((img: ManifestImage) => img.label));
  for (const c of raw.knownClasses) {
    if (!labels.has(c)) throw new Error(`knownClasses contains ${c} but no image has that label`);
  }
  const backbone = { ...DEFAULTS.backbone, ...(raw.backbone ?? {}) };
  const labeledFraction = raw.labeledFraction ?? DEFAULTS.labeledFraction;
  if (!(labeledFraction > 0 && labeledFraction <= 1)) {
    throw new Error(`labeledFraction must be in (0, 1], got ${labeledFraction}`);
  }
  return {
    datasetName: raw.datasetName ?? "unnamed",
    backbone,
    images: raw.images,
    knownClasses: raw.knownClasses,
    labeledFraction,
    seed: raw.seed ?? DEFAULTS.seed,
    recipe: { ...DEFAULT_RECIPE, ...(raw.recipe ?? {}) },
  };
}
