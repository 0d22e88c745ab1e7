/**
 * Whitening diagnostics: per-axis distance to a standard normal, the
 * pairwise correlation matrix and the training loss curve. Imperfect
 * whitening is quantified here, not hidden.
 */

export interface WhitenReport {
  dim: number;
  heldOut: number;
  normalityKs: number[];        // per-axis sup |ecdf - Phi|
  correlation: number[][];      // symmetric, unit diagonal
  maxAbsOffDiagonal: number;
  lossCurve: number[];
}

/** Inverse standard normal CDF (Acklam's rational approximation, ~1e-9). */
export function normalInverse(p: number): number {
  if (!(p > 0 && p < 1)) throw new Error(`quantile out of range: ${p}`);
  const a = [-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00];
  const b = [-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
             6.680131188771972e+01, -1.328068155288572e+01];
  const c = [-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00];
  const d = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
             3.754408661907416e+00];
  const pl = 0.02425;
  if (p < pl) {
    const q = Math.sqrt(-2 * Math.log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
      ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > 1 - pl) {
    const q = Math.sqrt(-2 * Math.log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
      ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const q = p - 0.5;
  const r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
    (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

/** Standard normal CDF via an erf rational approximation (~1e-7). */
export function normalCdf(x: number): number {
  const t = 1 / (1 + 0.3275911 * Math.abs(x) / Math.SQRT2);
  const poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 +
    t * (-1.453152027 + t * 1.061405429))));
  const erf = 1 - poly * Math.exp(-(x * x) / 2);
  return x >= 0 ? 0.5 * (1 + erf) : 0.5 * (1 - erf);
}

export function ksToStandardNormal(values: number[]): number {
  const sorted = [...values].sort((a, b) => a - b);
  const n = sorted.length;
  let worst = 0;
  for (let i = 0; i < n; i++) {
    const phi = normalCdf(sorted[i]);
    worst = Math.max(worst, Math.abs((i + 1) / n - phi), Math.abs(i / n - phi));
  }
  return worst;
}

export function correlationMatrix(rows: number[][]): number[][] {
  const n = rows.length;
  const d = rows[0].length;
  const mean = new Array(d).fill(0);
  for (const r of rows) for (let j = 0; j < d; j++) mean[j] += r[j] / n;
  const cov = Array.from({ length: d }, () => new Array(d).fill(0));
  for (const r of rows) {
    for (let j = 0; j < d; j++) {
      for (let k = j; k < d; k++) {
        cov[j][k] += (r[j] - mean[j]) * (r[k] - mean[k]) / (n - 1);
      }
    }
  }
  const corr = Array.from({ length: d }, () => new Array(d).fill(0));
  for (let j = 0; j < d; j++) {
    for (let k = j; k < d; k++) {
      const c = cov[j][k] / Math.sqrt(cov[j][j] * cov[k][k]);
      corr[j][k] = c;
      corr[k][j] = c;
    }
  }
  return corr;
}

export function buildReport(
  whitenedHeldOut: number[][],
  lossCurve: number[],
): WhitenReport {
  const dim = whitenedHeldOut[0].length;
  const normalityKs = Array.from({ length: dim }, (_, j) =>
    ksToStandardNormal(whitenedHeldOut.map((r) => r[j])),
  );
  const correlation = correlationMatrix(whitenedHeldOut);
  let off = 0;
  for (let j = 0; j < dim; j++) {
    for (let k = 0; k < dim; k++) {
      if (j !== k) off = Math.max(off, Math.abs(correlation[j][k]));
    }
  }
  return {
    dim,
    heldOut: whitenedHeldOut.length,
    normalityKs,
    correlation,
    maxAbsOffDiagonal: off,
    lossCurve,
  };
}
