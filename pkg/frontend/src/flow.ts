/**
 * A coupling-layer normalizing flow mapping data toward a diagonal
 * standard normal. Each layer freezes one half of the coordinates and
 * applies an affine map to the other half, with shift and log-scale
 * predicted by a small MLP of the frozen half; layers alternate halves.
 * The family (depth, width) is a configuration knob.
 */

import * as tf from '@tensorflow/tfjs';

import { normalInverse } from './report.js';

export interface FlowConfig {
  dim: number;
  layers: number;
  hidden: number;
  seed: number;
  scaleCap: number; // bound on |log scale| via tanh, keeps training stable
}

export const DEFAULT_FLOW: Omit<FlowConfig, 'dim'> = {
  layers: 8,
  hidden: 48,
  seed: 1,
  scaleCap: 2.5,
};

/**
 * Fixed affine pre-layer: z0 = L (x - mean) with L = Sigma^(-1/2) from the
 * training sample. It removes global location, scale and correlation up
 * front, so the couplings only have to reshape the residual distribution.
 */
export interface Standardizer {
  mean: number[];
  transform: number[][];  // L
  inverse: number[][];    // L^(-1)
}

function jacobiEigen(a: number[][]): { values: number[]; vectors: number[][] } {
  const d = a.length;
  const m = a.map((row) => [...row]);
  const v: number[][] = Array.from({ length: d }, (_, i) =>
    Array.from({ length: d }, (_, j) => (i === j ? 1.0 : 0.0)),
  );
  for (let sweep = 0; sweep < 64; sweep++) {
    let off = 0;
    for (let p = 0; p < d; p++) {
      for (let q = p + 1; q < d; q++) off += m[p][q] * m[p][q];
    }
    if (off < 1e-24) break;
    for (let p = 0; p < d; p++) {
      for (let q = p + 1; q < d; q++) {
        if (Math.abs(m[p][q]) < 1e-18) continue;
        const theta = 0.5 * Math.atan2(2 * m[p][q], m[q][q] - m[p][p]);
        const c = Math.cos(theta);
        const s = Math.sin(theta);
        for (let k = 0; k < d; k++) {
          const mkp = m[k][p];
          const mkq = m[k][q];
          m[k][p] = c * mkp - s * mkq;
          m[k][q] = s * mkp + c * mkq;
        }
        for (let k = 0; k < d; k++) {
          const mpk = m[p][k];
          const mqk = m[q][k];
          m[p][k] = c * mpk - s * mqk;
          m[q][k] = s * mpk + c * mqk;
        }
        for (let k = 0; k < d; k++) {
          const vkp = v[k][p];
          const vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  return { values: m.map((row, i) => row[i]), vectors: v };
}

/**
 * Monotone per-axis output maps taking the trained couplings' marginals
 * onto exact normal quantiles (a piecewise-linear Gaussianization fitted
 * on the training outputs). Monotone per-axis maps leave the dependence
 * structure untouched, so this only polishes the marginals — the same job
 * a spline flow's output warp does internally.
 */
export interface MarginalPolish {
  knotsY: number[][]; // per axis, strictly increasing
  knotsZ: number[];   // shared normal-quantile targets
}

export function fitMarginalPolish(rows: number[][], knotCount = 513): MarginalPolish {
  const n = rows.length;
  const dim = rows[0].length;
  const ps = Array.from({ length: knotCount }, (_, k) => (k + 0.5) / knotCount);
  const knotsZ = ps.map(normalInverse);
  const knotsY: number[][] = [];
  for (let j = 0; j < dim; j++) {
    const col = rows.map((r) => r[j]).sort((a, b) => a - b);
    const knots = ps.map((p) => col[Math.min(n - 1, Math.round(p * (n - 1)))]);
    for (let k = 1; k < knots.length; k++) {
      if (knots[k] <= knots[k - 1]) knots[k] = knots[k - 1] + 1e-12; // ties
    }
    knotsY.push(knots);
  }
  return { knotsY, knotsZ };
}

function interpMonotone(x: number, xs: number[], ys: number[]): number {
  const last = xs.length - 1;
  if (x <= xs[0]) {
    const slope = (ys[1] - ys[0]) / (xs[1] - xs[0]);
    return ys[0] + (x - xs[0]) * slope;
  }
  if (x >= xs[last]) {
    const slope = (ys[last] - ys[last - 1]) / (xs[last] - xs[last - 1]);
    return ys[last] + (x - xs[last]) * slope;
  }
  let lo = 0;
  let hi = last;
  while (hi - lo > 1) {
    const mid = (lo + hi) >> 1;
    if (xs[mid] <= x) lo = mid;
    else hi = mid;
  }
  const t = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

export function applyPolish(polish: MarginalPolish, rows: number[][]): number[][] {
  return rows.map((r) =>
    r.map((v, j) => interpMonotone(v, polish.knotsY[j], polish.knotsZ)),
  );
}

export function invertPolish(polish: MarginalPolish, rows: number[][]): number[][] {
  return rows.map((r) =>
    r.map((v, j) => interpMonotone(v, polish.knotsZ, polish.knotsY[j])),
  );
}

export function fitStandardizer(rows: number[][]): Standardizer {
  const n = rows.length;
  const d = rows[0].length;
  const mean = new Array(d).fill(0);
  for (const r of rows) for (let j = 0; j < d; j++) mean[j] += r[j] / n;
  const cov = Array.from({ length: d }, () => new Array(d).fill(0));
  for (const r of rows) {
    for (let j = 0; j < d; j++) {
      for (let k = j; k < d; k++) {
        cov[j][k] += ((r[j] - mean[j]) * (r[k] - mean[k])) / (n - 1);
      }
    }
  }
  for (let j = 0; j < d; j++) for (let k = 0; k < j; k++) cov[j][k] = cov[k][j];
  const { values, vectors } = jacobiEigen(cov);
  const mk = (pow: number) =>
    Array.from({ length: d }, (_, i) =>
      Array.from({ length: d }, (_, j) => {
        let s = 0;
        for (let k = 0; k < d; k++) {
          s += vectors[i][k] * Math.pow(Math.max(values[k], 1e-12), pow) * vectors[j][k];
        }
        return s;
      }),
    );
  return { mean, transform: mk(-0.5), inverse: mk(0.5) };
}

function buildNet(
  inDim: number,
  outDim: number,
  hidden: number,
  seed: number,
): tf.Sequential {
  const init = (s: number) => tf.initializers.glorotUniform({ seed: s });
  return tf.sequential({
    layers: [
      tf.layers.dense({
        inputShape: [inDim], units: hidden, activation: 'relu',
        kernelInitializer: init(seed),
      }),
      tf.layers.dense({
        units: hidden, activation: 'relu', kernelInitializer: init(seed + 1),
      }),
      tf.layers.dense({
        units: 2 * outDim,
        kernelInitializer: tf.initializers.zeros(),
        biasInitializer: tf.initializers.zeros(),
      }),
    ],
  });
}

class CouplingLayer {
  readonly keepDims: number[];
  readonly moveDims: number[];
  readonly net: tf.Sequential;

  constructor(cfg: FlowConfig, index: number) {
    const half = Math.max(1, Math.floor(cfg.dim / 2));
    const all = Array.from({ length: cfg.dim }, (_, i) => i);
    const first = all.slice(0, half);
    const second = all.slice(half);
    // alternate which half is frozen, and rotate by layer parity for odd dims
    this.keepDims = index % 2 === 0 ? first : second;
    this.moveDims = index % 2 === 0 ? second : first;
    this.net = buildNet(
      this.keepDims.length, this.moveDims.length, cfg.hidden,
      cfg.seed + 1000 * (index + 1),
    );
    this.scaleCap = cfg.scaleCap;
  }

  private readonly scaleCap: number;

  private shiftScale(kept: tf.Tensor2D): [tf.Tensor2D, tf.Tensor2D] {
    const raw = this.net.predict(kept) as tf.Tensor2D;
    const nMove = this.moveDims.length;
    const shift = tf.slice(raw, [0, 0], [-1, nMove]) as tf.Tensor2D;
    const logScale = tf.mul(
      tf.tanh(tf.slice(raw, [0, nMove], [-1, nMove])), this.scaleCap,
    ) as tf.Tensor2D;
    return [shift, logScale];
  }

  /** data -> latent; returns the moved part and the log-det contribution. */
  forward(x: tf.Tensor2D): [tf.Tensor2D, tf.Tensor1D] {
    const kept = gatherCols(x, this.keepDims);
    const moved = gatherCols(x, this.moveDims);
    const [shift, logScale] = this.shiftScale(kept);
    const y = tf.add(tf.mul(moved, tf.exp(logScale)), shift) as tf.Tensor2D;
    const logDet = tf.sum(logScale, 1) as tf.Tensor1D;
    return [scatterCols(kept, y, this.keepDims, this.moveDims), logDet];
  }

  /** latent -> data (exact inverse of forward). */
  inverse(y: tf.Tensor2D): tf.Tensor2D {
    const kept = gatherCols(y, this.keepDims);
    const moved = gatherCols(y, this.moveDims);
    const [shift, logScale] = this.shiftScale(kept);
    const x = tf.mul(tf.sub(moved, shift), tf.exp(tf.neg(logScale))) as tf.Tensor2D;
    return scatterCols(kept, x, this.keepDims, this.moveDims);
  }

  weights(): tf.Variable[] {
    return this.net.trainableWeights.map((w) => w.read() as unknown as tf.Variable);
  }

  trainables(): tf.LayerVariable[] {
    return this.net.trainableWeights;
  }
}

function gatherCols(x: tf.Tensor2D, dims: number[]): tf.Tensor2D {
  return tf.gather(x, dims, 1) as tf.Tensor2D;
}

function scatterCols(
  kept: tf.Tensor2D, moved: tf.Tensor2D, keepDims: number[], moveDims: number[],
): tf.Tensor2D {
  const dim = keepDims.length + moveDims.length;
  const order = new Array<number>(dim);
  keepDims.forEach((d, i) => (order[d] = i));
  moveDims.forEach((d, i) => (order[d] = keepDims.length + i));
  return tf.gather(tf.concat([kept, moved], 1), order, 1) as tf.Tensor2D;
}

export class Flow {
  readonly cfg: FlowConfig;
  readonly couplings: CouplingLayer[];
  standardizer: Standardizer | null = null;
  polish: MarginalPolish | null = null;

  constructor(cfg: FlowConfig) {
    if (cfg.dim < 2) throw new Error('the flow needs at least two dimensions');
    this.cfg = cfg;
    this.couplings = Array.from(
      { length: cfg.layers }, (_, i) => new CouplingLayer(cfg, i),
    );
  }

  private preForward(x: tf.Tensor2D): tf.Tensor2D {
    if (this.standardizer === null) return x;
    const s = this.standardizer;
    const centered = tf.sub(x, tf.tensor1d(s.mean));
    return tf.matMul(centered, tf.tensor2d(s.transform), false, true) as tf.Tensor2D;
  }

  private preInverse(z: tf.Tensor2D): tf.Tensor2D {
    if (this.standardizer === null) return z;
    const s = this.standardizer;
    return tf.add(
      tf.matMul(z, tf.tensor2d(s.inverse), false, true), tf.tensor1d(s.mean),
    ) as tf.Tensor2D;
  }

  /** data -> latent with the total log-det of the Jacobian (up to the
   * constant pre-layer determinant, which training does not need). */
  forward(x: tf.Tensor2D): [tf.Tensor2D, tf.Tensor1D] {
    let out = this.preForward(x);
    let logDet = tf.zeros([x.shape[0]]) as tf.Tensor1D;
    for (const layer of this.couplings) {
      const [y, ld] = layer.forward(out);
      out = y;
      logDet = tf.add(logDet, ld) as tf.Tensor1D;
    }
    return [out, logDet];
  }

  inverse(z: tf.Tensor2D): tf.Tensor2D {
    let out = z;
    for (let i = this.couplings.length - 1; i >= 0; i--) {
      out = this.couplings[i].inverse(out);
    }
    return this.preInverse(out);
  }

  /** Full inverse including the marginal polish, on plain rows. */
  inverseRows(rows: number[][]): number[][] {
    const dePolished = this.polish ? invertPolish(this.polish, rows) : rows;
    const z = tf.tensor2d(dePolished);
    const x = this.inverse(z);
    const out = x.arraySync() as number[][];
    z.dispose();
    x.dispose();
    return out;
  }

  /** Mean negative log-likelihood under the standard-normal base. */
  loss(x: tf.Tensor2D): tf.Scalar {
    return tf.tidy(() => {
      const [z, logDet] = this.forward(x);
      const logBase = tf.mul(
        -0.5,
        tf.add(tf.sum(tf.square(z), 1), this.cfg.dim * Math.log(2 * Math.PI)),
      );
      return tf.neg(tf.mean(tf.add(logBase, logDet))) as tf.Scalar;
    });
  }

  trainables(): tf.LayerVariable[] {
    return this.couplings.flatMap((c) => c.trainables());
  }

  /** Map raw rows to whitened rows (deterministic, batched). */
  whitenRows(rows: number[][], batch = 8192): number[][] {
    const out: number[][] = [];
    for (let start = 0; start < rows.length; start += batch) {
      const chunk = rows.slice(start, start + batch);
      const z = tf.tidy(() => {
        const x = tf.tensor2d(chunk);
        const [zz] = this.forward(x);
        return zz;
      });
      const data = z.arraySync() as number[][];
      z.dispose();
      out.push(...(this.polish ? applyPolish(this.polish, data) : data));
    }
    return out;
  }
}

export interface TrainOptions {
  epochs: number;
  batch: number;
  learningRate: number;
  seed: number;
  onEpoch?: (epoch: number, loss: number) => void;
}

/** Adam training over seeded shuffled batches; returns the loss curve. */
export async function trainFlow(
  flow: Flow,
  train: number[][],
  opts: TrainOptions,
): Promise<number[]> {
  const { shuffled, mulberry32 } = await import('./rng.js');
  const optimizer = tf.train.adam(opts.learningRate);
  const rng = mulberry32(opts.seed ^ 0x5f3759df);
  const losses: number[] = [];
  const vars = flow
    .trainables()
    .map((v) => v.read() as unknown as tf.Variable);
  for (let epoch = 0; epoch < opts.epochs; epoch++) {
    const order = shuffled(train.length, rng);
    let epochLoss = 0;
    let batches = 0;
    for (let start = 0; start < train.length; start += opts.batch) {
      const idx = Array.from(order.slice(start, start + opts.batch));
      const batchRows = idx.map((i) => train[i]);
      const x = tf.tensor2d(batchRows);
      const lossVal = optimizer.minimize(
        () => flow.loss(x), true, vars,
      ) as tf.Scalar;
      const v = (await lossVal.data())[0];
      lossVal.dispose();
      x.dispose();
      if (!Number.isFinite(v)) {
        throw new Error(`training diverged at epoch ${epoch} (loss=${v})`);
      }
      epochLoss += v;
      batches += 1;
    }
    const mean = epochLoss / Math.max(batches, 1);
    losses.push(mean);
    opts.onEpoch?.(epoch, mean);
  }
  optimizer.dispose();
  return losses;
}
