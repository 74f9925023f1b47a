/**
 * Score-distribution view for the current reference: equal-width bins over
 * [0, 1] so the same bin always means the same score range while the analyst
 * moves the slider or the reference.
 */

export interface Histogram {
  /** binCount + 1 edges; bin i covers [edges[i], edges[i+1]). */
  edges: number[];
  counts: number[];
  total: number;
}

export function scoreHistogram(values: number[], binCount = 24): Histogram {
  if (!Number.isInteger(binCount) || binCount < 1) {
    throw new RangeError(`binCount must be a positive integer, got ${binCount}`);
  }
  const edges = Array.from({ length: binCount + 1 }, (_, i) => i / binCount);
  const counts = new Array<number>(binCount).fill(0);
  for (const v of values) {
    if (!(v >= 0 && v <= 1)) throw new RangeError(`score ${v} outside [0, 1]`);
    // top edge closes the last bin so a score of exactly 1 is counted
    const bin = Math.min(Math.floor(v * binCount), binCount - 1);
    counts[bin]++;
  }
  return { edges, counts, total: values.length };
}

export function occupiedBins(h: Histogram): number {
  return h.counts.filter((c) => c > 0).length;
}

/** Fraction of mass at or below the threshold, by bin upper edge. */
export function massBelow(h: Histogram, threshold: number): number {
  if (h.total === 0) return 0;
  let acc = 0;
  for (let i = 0; i < h.counts.length; i++) {
    if (h.edges[i + 1] <= threshold) acc += h.counts[i];
  }
  return acc / h.total;
}

export function massAbove(h: Histogram, threshold: number): number {
  if (h.total === 0) return 0;
  let acc = 0;
  for (let i = 0; i < h.counts.length; i++) {
    if (h.edges[i] >= threshold) acc += h.counts[i];
  }
  return acc / h.total;
}
