/**
 * Small deterministic RNG utilities (mulberry32 core) so training batches,
 * splits and demo data are reproducible from a single seed.
 */

export type Rng = () => number;

export function mulberry32(seed: number): Rng {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function shuffled(n: number, rng: Rng): Int32Array {
  const idx = new Int32Array(n);
  for (let i = 0; i < n; i++) idx[i] = i;
  for (let i = n - 1; i > 0; i--) {
    const j = Math.floor(rng() * (i + 1));
    const tmp = idx[i];
    idx[i] = idx[j];
    idx[j] = tmp;
  }
  return idx;
}

export function gaussPair(rng: Rng): [number, number] {
  // Box-Muller with a guard against log(0)
  const u = Math.max(rng(), 1e-12);
  const v = rng();
  const r = Math.sqrt(-2 * Math.log(u));
  return [r * Math.cos(2 * Math.PI * v), r * Math.sin(2 * Math.PI * v)];
}

export interface MixtureComponent {
  mean: number[];
  sigma: number[];
  weight: number;
}

/** Sample a weighted sum of diagonal Gaussians (the demo distribution). */
export function sampleMixture(
  components: MixtureComponent[],
  n: number,
  rng: Rng,
): number[][] {
  const dim = components[0].mean.length;
  const cum: number[] = [];
  let total = 0;
  for (const c of components) {
    total += c.weight;
    cum.push(total);
  }
  const out: number[][] = [];
  for (let i = 0; i < n; i++) {
    const pick = rng() * total;
    let k = 0;
    while (cum[k] < pick) k++;
    const c = components[k];
    const row = new Array<number>(dim);
    for (let j = 0; j < dim; j += 2) {
      const [a, b] = gaussPair(rng);
      row[j] = c.mean[j] + c.sigma[j] * a;
      if (j + 1 < dim) row[j + 1] = c.mean[j + 1] + c.sigma[j + 1] * b;
    }
    out.push(row);
  }
  return out;
}

/** The three-bump two-dimensional demo distribution used in the tests. */
export function demoThreeGaussians(n: number, seed: number): number[][] {
  return sampleMixture(
    [
      { mean: [-2.0, -1.0], sigma: [0.6, 0.4], weight: 0.4 },
      { mean: [1.5, 1.8], sigma: [0.5, 0.7], weight: 0.35 },
      { mean: [2.2, -1.6], sigma: [0.4, 0.5], weight: 0.25 },
    ],
    n,
    mulberry32(seed),
  );
}
