/**
 * Command line: `train` fits a whitening flow on a sample file and writes
 * the model directory, a diagnostics report and (optionally) the whitened
 * training input; `whiten` applies a saved model to new sample files.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { readPoints, writePoints } from './csv.js';
import { DEFAULT_WHITENER, loadWhitener, saveWhitener, trainWhitener, whiten } from './whiten.js';

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .command(
      'train',
      'train a whitening flow on a sample file',
      (y) =>
        y
          .option('input', { type: 'string', demandOption: true })
          .option('model', { type: 'string', demandOption: true })
          .option('report', { type: 'string' })
          .option('whitened', { type: 'string' })
          .option('epochs', { type: 'number', default: DEFAULT_WHITENER.epochs })
          .option('layers', { type: 'number', default: DEFAULT_WHITENER.layers })
          .option('hidden', { type: 'number', default: DEFAULT_WHITENER.hidden })
          .option('batch', { type: 'number', default: DEFAULT_WHITENER.batch })
          .option('lr', { type: 'number', default: DEFAULT_WHITENER.learningRate })
          .option('val-split', { type: 'number', default: DEFAULT_WHITENER.valSplit })
          .option('seed', { type: 'number', default: DEFAULT_WHITENER.seed }),
      async (argv) => {
        const rows = readPoints(argv.input);
        const cfg = {
          ...DEFAULT_WHITENER,
          epochs: argv.epochs, layers: argv.layers, hidden: argv.hidden,
          batch: argv.batch, learningRate: argv.lr,
          valSplit: argv['val-split'], seed: argv.seed,
        };
        const trained = await trainWhitener(rows, cfg, (epoch, loss) => {
          if (epoch % 10 === 0) {
            process.stderr.write(`epoch ${epoch}: loss ${loss.toFixed(4)}\n`);
          }
        });
        await saveWhitener(argv.model, trained, cfg);
        if (argv.report) {
          fs.mkdirSync(path.dirname(argv.report), { recursive: true });
          fs.writeFileSync(argv.report, JSON.stringify(trained.report, null, 1));
        }
        if (argv.whitened) {
          writePoints(argv.whitened, whiten(trained.flow, rows));
        }
        process.stderr.write(
          `held-out normality KS: ${trained.report.normalityKs
            .map((v) => v.toFixed(4)).join(', ')}; ` +
          `max |off-diagonal corr|: ${trained.report.maxAbsOffDiagonal.toFixed(4)}\n`,
        );
      },
    )
    .command(
      'whiten',
      'apply a saved whitening flow to sample files',
      (y) =>
        y
          .option('model', { type: 'string', demandOption: true })
          .option('input', { type: 'string', array: true, demandOption: true })
          .option('output-dir', { type: 'string', demandOption: true }),
      async (argv) => {
        const { flow } = loadWhitener(argv.model);
        fs.mkdirSync(argv['output-dir'], { recursive: true });
        for (const inp of argv.input as string[]) {
          const rows = readPoints(inp);
          const out = path.join(
            argv['output-dir'],
            path.basename(inp).replace(/\.[^.]+$/, '') + '.white.csv',
          );
          writePoints(out, whiten(flow, rows));
        }
      },
    )
    .demandCommand(1)
    .strict()
    .parseAsync();
}

main().catch((err) => {
  process.stderr.write(`error: ${err?.message ?? err}\n`);
  process.exit(2);
});
