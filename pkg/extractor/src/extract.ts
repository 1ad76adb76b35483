/**
 * Extraction pipeline: load each image, derive two augmented views keyed to
 * the image content, embed both through the backbone (raw, unnormalized),
 * split into labeled support set and query stream, and write OCDE files, a
 * label CSV and a manifest snapshot.
 */
import { mkdirSync, writeFileSync } from "fs";
import { join, resolve } from "path";
import { augmentView } from "./augment.js";
import { createBackbone } from "./backbone.js";
import { ExtractionManifest } from "./manifest.js";
import { loadImage } from "./ppm.js";
import { DatasetRecord, writeDataset } from "./ocde.js";
import { Rng, hashBytes } from "./rng.js";

export interface ExtractionResult {
  labeledPath: string;
  streamPath: string;
  labelsPath: string;
  snapshotPath: string;
  dim: number;
  labeledCount: number;
  streamCount: number;
}

export function extract(manifest: ExtractionManifest, outDir: string): ExtractionResult {
  mkdirSync(outDir, { recursive: true });
  const backbone = createBackbone(manifest.backbone);

  const records: DatasetRecord[] = [];
  const labelRows: string[] = ["sample_id,label,path"];
  manifest.images.forEach((entry, index) => {
    const img = loadImage(entry.path);
    // content-keyed seed: duplicated images embed to identical vectors
    const rng = new Rng(hashBytes(img.pixels, manifest.seed));
    const views = [
      backbone.embed(augmentView(img, rng, manifest.recipe)),
      backbone.embed(augmentView(img, rng, manifest.recipe)),
    ];
    records.push({ id: index, label: entry.label, views });
    labelRows.push(`${index},${entry.label},${entry.path}`);
  });

  // per known class, the first labeledFraction of its images are support
  const known = new Set(manifest.knownClasses);
  const labeledIds = new Set<number>();
  for (const c of manifest.knownClasses) {
    const members = records.filter((r) => r.label === c);
    const take = Math.round(manifest.labeledFraction * members.length);
    members.slice(0, take).forEach((r) => labeledIds.add(r.id));
  }
  const labeled = records.filter((r) => labeledIds.has(r.id));
  const stream = records.filter((r) => !labeledIds.has(r.id));
  if (labeled.length === 0) throw new Error("labeled split is empty; raise labeledFraction");
  if (stream.length === 0) throw new Error("stream split is empty; lower labeledFraction or add images");

  const labeledPath = join(outDir, "labeled.ocde");
  const streamPath = join(outDir, "stream.ocde");
  const labelsPath = join(outDir, "labels.csv");
  const snapshotPath = join(outDir, "manifest.snapshot.json");
  writeDataset(labeledPath, labeled);
  writeDataset(streamPath, stream);
  writeFileSync(labelsPath, labelRows.join("\n") + "\n");
  writeFileSync(
    snapshotPath,
    JSON.stringify(
      {
        datasetName: manifest.datasetName,
        backbone: { ...manifest.backbone, identifier: backbone.identifier },
        embeddingDim: backbone.dim, // recorded from the backbone at run time
        recipe: manifest.recipe,
        knownClasses: manifest.knownClasses,
        labeledFraction: manifest.labeledFraction,
        seed: manifest.seed,
        images: manifest.images.map((img) => ({ ...img, path: resolve(img.path) })),
        counts: { labeled: labeled.length, stream: stream.length },
      },
      null,
      2,
    ) + "\n",
  );
  return {
    labeledPath,
    streamPath,
    labelsPath,
    snapshotPath,
    dim: backbone.dim,
    labeledCount: labeled.length,
    streamCount: stream.length,
  };
}
