/**
 * CLI: extract --manifest PATH [--out DIR]
 */
import { pathToFileURL } from "url";
import { extract } from "./extract.js";
import { loadManifest } from "./manifest.js";

function usage(): never {
  console.error("usage: extract --manifest PATH [--out DIR]");
  process.exit(2);
}

export function main(argv: string[]): number {
  const args = argv[0] === "extract" ? argv.slice(1) : argv;
  let manifestPath: string | undefined;
  let outDir = ".";
  for (let i = 0; i < args.length; i++) {
    if (args[i] === "--manifest") manifestPath = args[++i];
    else if (args[i] === "--out") outDir = args[++i];
    else usage();
  }
  if (!manifestPath) usage();
  try {
    const result = extract(loadManifest(manifestPath), outDir);
    console.log(
      `wrote ${result.labeledCount} labeled + ${result.streamCount} stream ` +
        `samples (d=${result.dim}) to ${outDir}`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
