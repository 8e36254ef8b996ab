/**
 * Mask-tool state for one project view. Brush strokes, drags, scale
 * handles and swaps accumulate a pending edit buffer; every buffered
 * edit is replayed through the local partition replica so the canvas
 * previews the exact post-state without a round-trip. The server
 * mirror is only replaced by server responses, never by local edits.
 *
 * One mutation may be in flight at a time; the tools lock while a
 * submit is pending.
 */

import { ApiClient } from './api.js';
import type { PgmMask } from './netpbm.js';
import {
  applyEdit,
  clonePartition,
  fromPgm,
  PartitionError,
  pixelCounts,
  validatePartition,
  type Partition,
} from './partition.js';
import type { EditRequestDto, MaskEditDto, ProjectManifest, SampleRunDto } from './types.js';

export class ToolBlockedError extends Error {}
export class BusyError extends Error {}

export interface EditorState {
  manifest: ProjectManifest;
  /** last partition confirmed by the server */
  serverMask: Partition;
  /** serverMask + pending edits, what the canvas shows */
  preview: Partition;
  pending: MaskEditDto[];
  selected: number | null;
  inFlight: boolean;
}

export function createEditor(manifest: ProjectManifest, mask: PgmMask): EditorState {
  const serverMask = fromPgm(mask);
  return {
    manifest,
    serverMask,
    preview: clonePartition(serverMask),
    pending: [],
    selected: null,
    inFlight: false,
  };
}

export function selectItem(state: EditorState, itemId: number | null): void {
  if (itemId !== null && (itemId < 0 || itemId >= state.preview.nItems)) {
    throw new ToolBlockedError(`no item ${itemId} to select`);
  }
  state.selected = itemId;
}

function requireSelection(state: EditorState): number {
  if (state.selected === null) {
    throw new ToolBlockedError('select an item before using a mask tool');
  }
  return state.selected;
}

/**
 * Try one more edit on top of the pending buffer. The replica applies
 * it to the current preview; anything the server would reject, plus
 * any edit that would leave some item without pixels, blocks here with
 * the reason instead of being buffered.
 */
export function pushEdit(state: EditorState, edit: MaskEditDto): Partition {
  if (state.inFlight) throw new BusyError('a mask submit is already in flight');
  let next: Partition;
  try {
    next = applyEdit(state.preview, edit);
  } catch (err) {
    if (err instanceof PartitionError) throw new ToolBlockedError(err.message);
    throw err;
  }
  const before = pixelCounts(state.preview);
  const report = validatePartition(next);
  const emptied = report.emptyItems.filter((i) => before[i] > 0);
  if (emptied.length > 0) {
    throw new ToolBlockedError(
      `this edit would leave item ${emptied.join(', ')} without pixels; ` +
      `remove the item instead`);
  }
  state.pending.push(edit);
  state.preview = next;
  return next;
}

// ----------------------------------------------------------- tools

/** Brush stroke over the selected item. Zero pixels buffers nothing. */
export function brush(state: EditorState, pixels: Array<[number, number]>,
                      polarity: 'add' | 'erase'): void {
  const item = requireSelection(state);
  if (pixels.length === 0) return;
  pushEdit(state, { kind: 'paint', item_id: item, pixels, polarity });
}

/** Drag of the selected item by (dx, dy) canvas pixels. */
export function dragTranslate(state: EditorState, dx: number, dy: number): void {
  const item = requireSelection(state);
  if (dx === 0 && dy === 0) return;
  pushEdit(state, { kind: 'translate', item_id: item, dx, dy });
}

/** Scale handle release: resize about an anchor point. */
export function scaleTo(state: EditorState, factor: number,
                        anchor: [number, number]): void {
  const item = requireSelection(state);
  if (factor === 1) return;
  pushEdit(state, { kind: 'scale', item_id: item, factor, anchor });
}

/** Swap picker: exchange the selected item's region with another. */
export function swapWith(state: EditorState, otherItem: number): void {
  const item = requireSelection(state);
  pushEdit(state, { kind: 'swap', item_id: item, other_item: otherItem });
}

/** Drop the pending buffer and fall back to the server's partition. */
export function discardPending(state: EditorState): void {
  if (state.inFlight) throw new BusyError('a mask submit is already in flight');
  state.pending = [];
  state.preview = clonePartition(state.serverMask);
}

/** Replace the whole view from server data (reload, job completion). */
export function loadFromServer(state: EditorState, manifest: ProjectManifest,
                               mask: PgmMask): void {
  state.manifest = manifest;
  state.serverMask = fromPgm(mask);
  state.preview = clonePartition(state.serverMask);
  state.pending = [];
  if (state.selected !== null && state.selected >= state.serverMask.nItems) {
    state.selected = null;
  }
}

// ---------------------------------------------------------- submits

/**
 * Send the buffer as a mask replacement (pre-finetune path). Exactly
 * one PUT per call; an empty buffer performs no request at all and
 * leaves the server untouched.
 */
export async function submitMaskUpdate(state: EditorState,
                                       client: ApiClient): Promise<ProjectManifest> {
  if (state.inFlight) throw new BusyError('a mask submit is already in flight');
  if (state.pending.length === 0) return state.manifest;
  state.inFlight = true;
  try {
    const edits = state.pending.slice();
    const manifest = await client.putMask(state.manifest.id, edits);
    state.manifest = manifest;
    // the preview already equals the server post-state by construction;
    // promote it rather than re-fetching the bytes
    state.serverMask = clonePartition(state.preview);
    state.pending = [];
    return manifest;
  } finally {
    state.inFlight = false;
  }
}

/**
 * Package the buffer as a post-finetune mask edit request; the console
 * submits it. The buffer stays pending until the job's result is
 * loaded back via loadFromServer.
 */
export function buildMaskEditRequest(state: EditorState, run: SampleRunDto): EditRequestDto {
  if (state.pending.length === 0) {
    throw new ToolBlockedError('no pending mask edits to submit');
  }
  const target = state.pending[state.pending.length - 1].item_id;
  return {
    kind: 'mask',
    run,
    target_item: target,
    mask_edits: state.pending.slice(),
  };
}
