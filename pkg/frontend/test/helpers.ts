import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';

import { Flow } from '../src/flow.js';
import { WhitenReport } from '../src/report.js';
import {
  DEFAULT_WHITENER,
  loadWhitener,
  saveWhitener,
  trainWhitener,
  WhitenerConfig,
} from '../src/whiten.js';
import { demoThreeGaussians } from '../src/rng.js';

export const TEST_CFG: WhitenerConfig = { ...DEFAULT_WHITENER, seed: 3 };
export const TEST_ROWS = 20_000;
export const TEST_DATA_SEED = 42;

export interface CachedModel {
  flow: Flow;
  report: WhitenReport;
  heldOutRows: number;
  modelDir: string;
}

/**
 * Train-once cache: training is deterministic in (config, data seed), so a
 * model directory saved by an earlier test run (or the other test file)
 * can be reused verbatim. Delete the directory to force a retrain.
 */
export async function trainedDemoModel(): Promise<CachedModel> {
  const tag = `flow-whitener-test-v2-s${TEST_CFG.seed}-d${TEST_DATA_SEED}`;
  const dir = path.join(os.tmpdir(), tag);
  const reportPath = path.join(dir, 'report.json');
  if (fs.existsSync(path.join(dir, 'model.json')) && fs.existsSync(reportPath)) {
    const { flow } = loadWhitener(dir);
    const saved = JSON.parse(fs.readFileSync(reportPath, 'utf8'));
    return {
      flow,
      report: saved.report as WhitenReport,
      heldOutRows: saved.heldOutRows as number,
      modelDir: dir,
    };
  }
  const rows = demoThreeGaussians(TEST_ROWS, TEST_DATA_SEED);
  const trained = await trainWhitener(rows, TEST_CFG);
  await saveWhitener(dir, trained, TEST_CFG);
  fs.writeFileSync(
    reportPath,
    JSON.stringify({ report: trained.report, heldOutRows: trained.heldOutRows }),
  );
  return {
    flow: trained.flow,
    report: trained.report,
    heldOutRows: trained.heldOutRows,
    modelDir: dir,
  };
}
