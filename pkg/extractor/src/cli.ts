#!/usr/bin/env node
/**
 * extract --kind K --images DIR --out FILE.fmat [--batch N]
 *
 * Writes one FMAT feature file for every readable image in DIR.
 */

import { realpathSync } from 'fs';
import { pathToFileURL } from 'url';

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { runExtract, ExtractError, FEATURE_KINDS } from './extract.js';
import type { FeatureKind } from './extract.js';

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .scriptName('extract')
    .usage('$0 --kind K --images DIR --out FILE.fmat [--batch N]')
    .option('kind', {
      choices: FEATURE_KINDS,
      demandOption: true,
      describe: 'feature family to extract',
    })
    .option('images', { type: 'string', demandOption: true, describe: 'image directory' })
    .option('out', { type: 'string', demandOption: true, describe: 'output FMAT path' })
    .option('batch', { type: 'number', default: 16, describe: 'images per inference batch' })
    .option('model', { type: 'string', default: 'builtin', describe: 'text model for caption/annot' })
    .option('device', { type: 'string', describe: 'placement hint (advisory)' })
    .strict()
    .fail((msg: string, err: Error | undefined) => {
      throw err ?? new ExtractError(msg);
    })
    .parse();

  const result = runExtract({
    imagesDir: args.images,
    kind: args.kind as FeatureKind,
    outPath: args.out,
    batchSize: args.batch,
    device: args.device,
    textModel: args.model,
  });
  process.stdout.write(result.outPath + '\n');
  return 0;
}

function invokedDirectly(): boolean {
  if (!process.argv[1]) return false;
  try {
    // realpath so the npm bin symlink still counts as this module
    return import.meta.url === pathToFileURL(realpathSync(process.argv[1])).href;
  } catch {
    return false;
  }
}

if (invokedDirectly()) {
  main(hideBin(process.argv))
    .then(code => {
      process.exitCode = code;
    })
    .catch(err => {
      const detail = err instanceof Error ? err.message : String(err);
      process.stderr.write(`error: ${detail}\n`);
      process.exitCode = 1;
    });
}
