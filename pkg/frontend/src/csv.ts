/**
 * Delimited numeric sample files: one point per row, comma or whitespace
 * separated, optional non-numeric header line. The same format is used by
 * the statistics backend, which is the only coupling between the two.
 */

import * as fs from 'node:fs';

export function parsePoints(text: string): number[][] {
  const rows: number[][] = [];
  const lines = text.split(/\r?\n/);
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line.length === 0 || line.startsWith('#')) continue;
    const parts = line.split(/[,\s]+/);
    const vals = parts.map(Number);
    if (vals.some((v) => Number.isNaN(v))) {
      if (rows.length === 0) continue; // header line
      throw new Error(`non-numeric row at line ${i + 1}: ${line}`);
    }
    rows.push(vals);
  }
  if (rows.length > 0) {
    const width = rows[0].length;
    if (rows.some((r) => r.length !== width)) {
      throw new Error('ragged rows in sample file');
    }
  }
  return rows;
}

export function readPoints(path: string): number[][] {
  return parsePoints(fs.readFileSync(path, 'utf8'));
}

export function formatPoints(rows: number[][]): string {
  return rows.map((r) => r.map((v) => v.toPrecision(17)).join(',')).join('\n') + '\n';
}

export function writePoints(path: string, rows: number[][]): void {
  fs.writeFileSync(path, formatPoints(rows));
}
