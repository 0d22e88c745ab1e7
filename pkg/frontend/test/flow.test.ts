import { describe, expect, it } from 'vitest';
import * as tf from '@tensorflow/tfjs';

import { Flow, trainFlow } from '../src/flow.js';
import { demoThreeGaussians, mulberry32, shuffled } from '../src/rng.js';
import { parsePoints, formatPoints } from '../src/csv.js';
import { correlationMatrix, ksToStandardNormal, normalCdf } from '../src/report.js';

const CFG = { dim: 2, layers: 4, hidden: 16, seed: 7, scaleCap: 2.5 };

describe('coupling flow', () => {
  it('is an exact bijection (forward then inverse round-trips)', () => {
    const flow = new Flow(CFG);
    const x = tf.tensor2d(demoThreeGaussians(64, 3));
    const [z] = flow.forward(x);
    const back = flow.inverse(z);
    const err = tf.max(tf.abs(tf.sub(back, x))).arraySync() as number;
    expect(err).toBeLessThan(1e-5);
  });

  it('moves every coordinate (alternating halves)', () => {
    const flow = new Flow(CFG);
    // seeded non-zero weights after one step ensure both halves transform;
    // structurally, layer masks must alternate
    const keeps = flow.couplings.map((c) => c.keepDims.join(','));
    expect(new Set(keeps).size).toBeGreaterThan(1);
  });

  it('training decreases the loss and is deterministic in the seed', async () => {
    const rows = demoThreeGaussians(800, 11);
    const mk = () => new Flow(CFG);
    const a = mk();
    const b = mk();
    const opts = { epochs: 3, batch: 128, learningRate: 2e-3, seed: 5 };
    const lossesA = await trainFlow(a, rows, opts);
    const lossesB = await trainFlow(b, rows, opts);
    expect(lossesA[lossesA.length - 1]).toBeLessThan(lossesA[0]);
    expect(lossesA).toEqual(lossesB);
  });

  it('rejects one-dimensional problems', () => {
    expect(() => new Flow({ ...CFG, dim: 1 })).toThrow(/two dimensions/);
  });
});

describe('support utilities', () => {
  it('csv round-trips points', () => {
    const rows = [[0.25, -1.5], [1e-9, 3.25]];
    const back = parsePoints(formatPoints(rows));
    expect(back).toEqual(rows);
  });

  it('csv skips a header and rejects ragged rows', () => {
    expect(parsePoints('x,y\n1,2\n3,4\n')).toEqual([[1, 2], [3, 4]]);
    expect(() => parsePoints('1,2\n3\n')).toThrow(/ragged/);
  });

  it('normal CDF is accurate enough for KS reporting', () => {
    expect(normalCdf(0)).toBeCloseTo(0.5, 7);
    expect(normalCdf(1.959964)).toBeCloseTo(0.975, 5);
    expect(normalCdf(-1.959964)).toBeCloseTo(0.025, 5);
  });

  it('KS distance of true normal draws is small', () => {
    const rng = mulberry32(99);
    const vals: number[] = [];
    for (let i = 0; i < 5000; i++) {
      const u = Math.max(rng(), 1e-12);
      const v = rng();
      vals.push(Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v));
    }
    expect(ksToStandardNormal(vals)).toBeLessThan(0.03);
  });

  it('correlation matrix is symmetric with unit diagonal', () => {
    const rows = demoThreeGaussians(2000, 17);
    const corr = correlationMatrix(rows);
    expect(corr[0][0]).toBeCloseTo(1, 9);
    expect(corr[1][1]).toBeCloseTo(1, 9);
    expect(corr[0][1]).toBeCloseTo(corr[1][0], 12);
    // the demo mixture is genuinely correlated
    expect(Math.abs(corr[0][1])).toBeGreaterThan(0.05);
  });

  it('shuffle is a permutation', () => {
    const idx = Array.from(shuffled(100, mulberry32(1)));
    expect([...idx].sort((a, b) => a - b)).toEqual(
      Array.from({ length: 100 }, (_, i) => i),
    );
  });
});
