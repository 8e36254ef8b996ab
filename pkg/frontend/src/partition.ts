/**
 * Client-side replica of the server's segmentation algebra, used for
 * instant mask previews. The server stays authoritative; this module
 * exists so a brush stroke or drag renders its resulting partition
 * without a round-trip. Outputs must match the server pixel-for-pixel,
 * which pins the two load-bearing conventions:
 *
 *  - vacated pixels take the label of the nearest donor pixel by
 *    4-connected (taxicab) distance, ties to the smallest item id;
 *  - scale resamples by inverse-mapping each destination pixel with
 *    floor(x + 0.5) rounding.
 */

import type { MaskEditDto } from './types.js';
import type { PgmMask } from './netpbm.js';

export class PartitionError extends Error {}

export interface Partition {
  width: number;
  height: number;
  nItems: number;
  labels: Int32Array; // row-major
}

export function fromPgm(mask: PgmMask): Partition {
  return { width: mask.width, height: mask.height, nItems: mask.nItems, labels: mask.labels.slice() };
}

export function toPgm(p: Partition): PgmMask {
  return { width: p.width, height: p.height, nItems: p.nItems, labels: p.labels.slice() };
}

export function clonePartition(p: Partition): Partition {
  return { ...p, labels: p.labels.slice() };
}

export function pixelCounts(p: Partition): number[] {
  const counts = new Array(p.nItems).fill(0);
  for (let i = 0; i < p.labels.length; i++) counts[p.labels[i]] += 1;
  return counts;
}

export interface PartitionReport {
  valid: boolean;
  histogram: number[];
  emptyItems: number[];
}

export function validatePartition(p: Partition): PartitionReport {
  for (let i = 0; i < p.labels.length; i++) {
    const l = p.labels[i];
    if (l < 0 || l >= p.nItems) {
      const r = Math.floor(i / p.width);
      const c = i % p.width;
      throw new PartitionError(`pixel (${r}, ${c}) holds label ${l}, valid range [0, ${p.nItems})`);
    }
  }
  const histogram = pixelCounts(p);
  const emptyItems = histogram.flatMap((n, i) => (n === 0 ? [i] : []));
  return { valid: true, histogram, emptyItems };
}

function checkItem(p: Partition, item: number): void {
  if (!Number.isInteger(item) || item < 0 || item >= p.nItems) {
    throw new PartitionError(`item ${item} outside [0, ${p.nItems})`);
  }
}

/**
 * Multi-source BFS distance from each donor label's pixels, then per
 * pixel the donor with the smallest distance wins; equal distances go
 * to the smallest item id because donors are scanned in ascending
 * order and only a strictly smaller distance replaces the winner.
 */
export function nearestRegionFill(p: Partition, fill: Uint8Array, exclude: number[]): Int32Array {
  const out = p.labels.slice();
  let any = false;
  for (let i = 0; i < fill.length; i++) if (fill[i]) { any = true; break; }
  if (!any) return out;

  const excluded = new Set(exclude);
  const donors: number[] = [];
  for (let l = 0; l < p.nItems; l++) {
    if (excluded.has(l)) continue;
    for (let i = 0; i < p.labels.length; i++) {
      if (p.labels[i] === l && !fill[i]) { donors.push(l); break; }
    }
  }
  if (donors.length === 0) {
    throw new PartitionError('no remaining region is available to fill the vacated pixels');
  }

  const size = p.width * p.height;
  const best = new Int32Array(size).fill(-1); // distance of current winner
  const winner = new Int32Array(size).fill(-1);
  const dist = new Int32Array(size);
  const queue = new Int32Array(size);

  for (const l of donors) {
    dist.fill(-1);
    let head = 0, tail = 0;
    for (let i = 0; i < size; i++) {
      if (p.labels[i] === l && !fill[i]) {
        dist[i] = 0;
        queue[tail++] = i;
      }
    }
    while (head < tail) {
      const i = queue[head++];
      const d = dist[i] + 1;
      const r = Math.floor(i / p.width);
      const c = i % p.width;
      if (r > 0 && dist[i - p.width] < 0) { dist[i - p.width] = d; queue[tail++] = i - p.width; }
      if (r < p.height - 1 && dist[i + p.width] < 0) { dist[i + p.width] = d; queue[tail++] = i + p.width; }
      if (c > 0 && dist[i - 1] < 0) { dist[i - 1] = d; queue[tail++] = i - 1; }
      if (c < p.width - 1 && dist[i + 1] < 0) { dist[i + 1] = d; queue[tail++] = i + 1; }
    }
    for (let i = 0; i < size; i++) {
      if (!fill[i]) continue;
      if (best[i] < 0 || dist[i] < best[i]) {
        best[i] = dist[i];
        winner[i] = l;
      }
    }
  }
  for (let i = 0; i < size; i++) if (fill[i]) out[i] = winner[i];
  return out;
}

function finish(p: Partition, labels: Int32Array): Partition {
  const next: Partition = { ...p, labels };
  validatePartition(next);
  return next;
}

function transform(p: Partition, edit: MaskEditDto): Partition {
  checkItem(p, edit.item_id);
  const size = p.width * p.height;
  const src = new Uint8Array(size);
  let owned = 0;
  for (let i = 0; i < size; i++) {
    if (p.labels[i] === edit.item_id) { src[i] = 1; owned += 1; }
  }
  if (owned === 0) throw new PartitionError(`item ${edit.item_id} has no pixels to transform`);

  const dest = new Uint8Array(size);
  if (edit.kind === 'translate') {
    const dx = edit.dx ?? 0;
    const dy = edit.dy ?? 0;
    for (let i = 0; i < size; i++) {
      if (!src[i]) continue;
      const r = Math.floor(i / p.width) + dy;
      const c = (i % p.width) + dx;
      if (r >= 0 && r < p.height && c >= 0 && c < p.width) dest[r * p.width + c] = 1;
    }
  } else {
    const factor = edit.factor ?? 1;
    if (!(factor > 0)) throw new PartitionError(`scale factor must be positive, got ${factor}`);
    if (!edit.anchor) throw new PartitionError('scale edit needs an anchor point');
    const [ar, ac] = edit.anchor;
    for (let rr = 0; rr < p.height; rr++) {
      for (let cc = 0; cc < p.width; cc++) {
        const sr = Math.floor(ar + (rr - ar) / factor + 0.5);
        const sc = Math.floor(ac + (cc - ac) / factor + 0.5);
        if (sr >= 0 && sr < p.height && sc >= 0 && sc < p.width && src[sr * p.width + sc]) {
          dest[rr * p.width + cc] = 1;
        }
      }
    }
  }

  let anyDest = false;
  for (let i = 0; i < size; i++) if (dest[i]) { anyDest = true; break; }
  if (!anyDest) {
    throw new PartitionError(
      `transform leaves item ${edit.item_id} fully off-canvas; remove the item instead`);
  }

  const vacated = new Uint8Array(size);
  for (let i = 0; i < size; i++) vacated[i] = src[i] && !dest[i] ? 1 : 0;
  const filled = nearestRegionFill(p, vacated, [edit.item_id]);
  for (let i = 0; i < size; i++) if (dest[i]) filled[i] = edit.item_id;
  return finish(p, filled);
}

function paint(p: Partition, edit: MaskEditDto): Partition {
  checkItem(p, edit.item_id);
  const pixels = edit.pixels ?? [];
  for (const [r, c] of pixels) {
    if (r < 0 || r >= p.height || c < 0 || c >= p.width) {
      throw new PartitionError(`paint pixel (${r}, ${c}) outside ${p.height}x${p.width} canvas`);
    }
  }
  const labels = p.labels.slice();
  if ((edit.polarity ?? 'add') === 'add') {
    for (const [r, c] of pixels) labels[r * p.width + c] = edit.item_id;
    return finish(p, labels);
  }

  const size = p.width * p.height;
  const erase = new Uint8Array(size);
  let erased = 0;
  for (const [r, c] of pixels) {
    const i = r * p.width + c;
    if (labels[i] === edit.item_id && !erase[i]) { erase[i] = 1; erased += 1; }
  }
  let owned = 0;
  for (let i = 0; i < size; i++) if (labels[i] === edit.item_id) owned += 1;
  if (erased > 0 && erased >= owned) {
    throw new PartitionError(
      `erasing ${erased} pixels would empty item ${edit.item_id}; remove the item instead`);
  }
  const filled = nearestRegionFill({ ...p, labels }, erase, [edit.item_id]);
  return finish(p, filled);
}

function swap(p: Partition, i: number, j: number): Partition {
  checkItem(p, i);
  checkItem(p, j);
  if (i === j) throw new PartitionError(`cannot swap item ${i} with itself`);
  const labels = p.labels.slice();
  let na = 0, nb = 0;
  for (let k = 0; k < labels.length; k++) {
    if (labels[k] === i) na += 1;
    else if (labels[k] === j) nb += 1;
  }
  if (na === 0 || nb === 0) {
    throw new PartitionError(`swap requires both items nonempty (${i}: ${na} px, ${j}: ${nb} px)`);
  }
  for (let k = 0; k < labels.length; k++) {
    if (labels[k] === i) labels[k] = j;
    else if (labels[k] === j) labels[k] = i;
  }
  return finish(p, labels);
}

export function applyEdit(p: Partition, edit: MaskEditDto): Partition {
  switch (edit.kind) {
    case 'translate':
    case 'scale':
      return transform(p, edit);
    case 'paint':
      return paint(p, edit);
    case 'swap':
      if (edit.other_item === undefined || edit.other_item < 0) {
        throw new PartitionError('swap edit needs other_item');
      }
      return swap(p, edit.item_id, edit.other_item);
    default:
      throw new PartitionError(`unknown edit kind ${JSON.stringify((edit as MaskEditDto).kind)}`);
  }
}

export function applyEdits(p: Partition, edits: MaskEditDto[]): Partition {
  let out = p;
  for (const e of edits) out = applyEdit(out, e);
  return out;
}

export interface RemovalPreview {
  partition: Partition;
  /** old item id -> new item id for every surviving item */
  remap: Map<number, number>;
}

export function removeItemPreview(p: Partition, removed: number): RemovalPreview {
  checkItem(p, removed);
  if (p.nItems < 2) throw new PartitionError('cannot remove the last item of a map');
  const size = p.width * p.height;
  const fill = new Uint8Array(size);
  for (let i = 0; i < size; i++) if (p.labels[i] === removed) fill[i] = 1;
  const filled = nearestRegionFill(p, fill, [removed]);

  const remap = new Map<number, number>();
  for (let old = 0; old < p.nItems; old++) {
    if (old === removed) continue;
    remap.set(old, old < removed ? old : old - 1);
  }
  const labels = new Int32Array(size);
  for (let i = 0; i < size; i++) labels[i] = remap.get(filled[i])!;
  return { partition: finish({ ...p, nItems: p.nItems - 1 }, labels), remap };
}
