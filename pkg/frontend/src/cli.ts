#!/usr/bin/env node
import { readFileSync } from "node:fs";
import { pathToFileURL } from "node:url";
import { ZodError } from "zod";

import { loadSpec, render } from "./render.js";

function usage(): void {
  console.error("usage: sageggr-plot plot --spec <spec.json>");
}

export function main(argv: string[]): number {
  if (argv[0] !== "plot") {
    usage();
    return 2;
  }
  const flagIndex = argv.indexOf("--spec");
  if (flagIndex < 0 || flagIndex + 1 >= argv.length) {
    usage();
    return 2;
  }
  const specPath = argv[flagIndex + 1];
  try {
    const raw = JSON.parse(readFileSync(specPath, "utf8"));
    const specs = Array.isArray(raw) ? raw : [raw];
    for (const entry of specs) {
      const written = render(loadSpec(entry));
      console.log(`wrote ${written}`);
    }
    return 0;
  } catch (error) {
    if (error instanceof ZodError) {
      console.error(`invalid plot spec: ${error.issues.map((i) => i.message).join("; ")}`);
      return 2;
    }
    if (error instanceof SyntaxError || (error as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`input error: ${(error as Error).message}`);
      return 2;
    }
    console.error(`render failed: ${(error as Error).message}`);
    return 1;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
