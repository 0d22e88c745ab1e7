/**
 * Training, persistence and application of the whitening flow.
 *
 * The model directory holds the weights in the tensor ecosystem's own
 * encoding (weights.bin + the spec list) plus a JSON sidecar with the
 * dimension, configuration and seed, so a saved model is self-describing.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

import * as tf from '@tensorflow/tfjs';

import { DEFAULT_FLOW, fitMarginalPolish, fitStandardizer, Flow, MarginalPolish, Standardizer, trainFlow } from './flow.js';
import { buildReport, WhitenReport } from './report.js';
import { mulberry32, shuffled } from './rng.js';

export interface WhitenerConfig {
  layers: number;
  hidden: number;
  epochs: number;
  finetuneEpochs: number;   // second phase at the reduced learning rate
  batch: number;
  learningRate: number;
  finetuneLearningRate: number;
  valSplit: number;
  seed: number;
  scaleCap: number;
}

export const DEFAULT_WHITENER: WhitenerConfig = {
  layers: DEFAULT_FLOW.layers,
  hidden: DEFAULT_FLOW.hidden,
  epochs: 40,
  finetuneEpochs: 20,
  batch: 512,
  learningRate: 3e-3,
  finetuneLearningRate: 5e-4,
  valSplit: 0.5,
  seed: 1,
  scaleCap: DEFAULT_FLOW.scaleCap,
};

export function validateConfig(cfg: WhitenerConfig): void {
  if (!(cfg.valSplit > 0 && cfg.valSplit < 1)) {
    throw new Error(`validation split must be in (0,1), got ${cfg.valSplit}`);
  }
  if (cfg.epochs < 1) throw new Error('epochs must be >= 1');
  if (cfg.layers < 2) throw new Error('the flow needs at least two layers');
}

export interface TrainedWhitener {
  flow: Flow;
  report: WhitenReport;
  trainRows: number;
  heldOutRows: number;
}

export async function trainWhitener(
  rows: number[][],
  cfg: WhitenerConfig = DEFAULT_WHITENER,
  onEpoch?: (epoch: number, loss: number) => void,
): Promise<TrainedWhitener> {
  validateConfig(cfg);
  if (rows.length < 100) {
    throw new Error(`too few samples to train a whitener (${rows.length})`);
  }
  const dim = rows[0].length;
  const order = shuffled(rows.length, mulberry32(cfg.seed));
  const nVal = Math.max(1, Math.round(rows.length * cfg.valSplit));
  const val = Array.from(order.slice(0, nVal), (i) => rows[i]);
  const train = Array.from(order.slice(nVal), (i) => rows[i]);

  const flow = new Flow({
    dim, layers: cfg.layers, hidden: cfg.hidden, seed: cfg.seed,
    scaleCap: cfg.scaleCap,
  });
  flow.standardizer = fitStandardizer(train);
  const losses = await trainFlow(flow, train, {
    epochs: cfg.epochs, batch: cfg.batch, learningRate: cfg.learningRate,
    seed: cfg.seed, onEpoch,
  });
  if (cfg.finetuneEpochs > 0) {
    const fine = await trainFlow(flow, train, {
      epochs: cfg.finetuneEpochs, batch: cfg.batch,
      learningRate: cfg.finetuneLearningRate, seed: cfg.seed + 1,
      onEpoch: onEpoch
        ? (e, l) => onEpoch(cfg.epochs + e, l)
        : undefined,
    });
    losses.push(...fine);
  }
  // fit the monotone per-axis output polish on the training outputs, then
  // evaluate the report on held-out data through the full map
  flow.polish = fitMarginalPolish(flow.whitenRows(train));
  const whitenedVal = flow.whitenRows(val);
  return {
    flow,
    report: buildReport(whitenedVal, losses),
    trainRows: train.length,
    heldOutRows: val.length,
  };
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

interface Sidecar {
  format: string;
  dimension: number;
  seed: number;
  config: Omit<WhitenerConfig, 'seed'> & { seed: number };
  standardizer: Standardizer | null;
  polish: MarginalPolish | null;
}

export async function saveWhitener(
  dir: string,
  trained: { flow: Flow },
  cfg: WhitenerConfig,
): Promise<void> {
  fs.mkdirSync(dir, { recursive: true });
  const named: tf.NamedTensorMap = {};
  trained.flow.couplings.forEach((c, ci) => {
    c.trainables().forEach((v, vi) => {
      named[`c${ci}/w${vi}`] = v.read();
    });
  });
  const { data, specs } = await tf.io.encodeWeights(named);
  fs.writeFileSync(path.join(dir, 'weights.bin'), Buffer.from(data));
  fs.writeFileSync(
    path.join(dir, 'weights.json'), JSON.stringify(specs, null, 1),
  );
  const sidecar: Sidecar = {
    format: 'flow-whitener-v1',
    dimension: trained.flow.cfg.dim,
    seed: cfg.seed,
    config: { ...cfg },
    standardizer: trained.flow.standardizer,
    polish: trained.flow.polish,
  };
  fs.writeFileSync(
    path.join(dir, 'model.json'), JSON.stringify(sidecar, null, 1),
  );
}

export function loadWhitener(dir: string): { flow: Flow; sidecar: Sidecar } {
  const sidecar = JSON.parse(
    fs.readFileSync(path.join(dir, 'model.json'), 'utf8'),
  ) as Sidecar;
  if (sidecar.format !== 'flow-whitener-v1') {
    throw new Error(`unrecognized model format in ${dir}`);
  }
  const specs = JSON.parse(
    fs.readFileSync(path.join(dir, 'weights.json'), 'utf8'),
  ) as tf.io.WeightsManifestEntry[];
  const raw = fs.readFileSync(path.join(dir, 'weights.bin'));
  const buffer = raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.byteLength);
  const named = tf.io.decodeWeights(buffer, specs);
  const cfg = sidecar.config;
  const flow = new Flow({
    dim: sidecar.dimension, layers: cfg.layers, hidden: cfg.hidden,
    seed: sidecar.seed, scaleCap: cfg.scaleCap,
  });
  flow.standardizer = sidecar.standardizer ?? null;
  flow.polish = sidecar.polish ?? null;
  flow.couplings.forEach((c, ci) => {
    c.trainables().forEach((v, vi) => {
      const key = `c${ci}/w${vi}`;
      if (!(key in named)) throw new Error(`missing weight tensor ${key}`);
      v.write(named[key]);
    });
  });
  return { flow, sidecar };
}

/** Apply a saved or in-memory flow to rows; one output row per input row. */
export function whiten(flow: Flow, rows: number[][]): number[][] {
  if (rows.length === 0) return [];
  if (rows[0].length !== flow.cfg.dim) {
    throw new Error(
      `model dimension ${flow.cfg.dim} does not match input ${rows[0].length}`,
    );
  }
  return flow.whitenRows(rows);
}
