/**
 * DOM wiring for the editor. All behavior that matters lives in the
 * imported modules; this file only moves bytes between them and the
 * page. Nothing here keeps client-only state the server cannot
 * restore: reloading refetches everything through the manifest and
 * the results endpoints.
 */

import { ApiClient, ApiError } from './api.js';
import {
  brush,
  buildMaskEditRequest,
  BusyError,
  createEditor,
  discardPending,
  dragTranslate,
  loadFromServer,
  scaleTo,
  selectItem,
  submitMaskUpdate,
  swapWith,
  ToolBlockedError,
  type EditorState,
} from './editor.js';
import {
  buildInterpolate,
  buildReconstruct,
  buildRemove,
  buildTextEdit,
  DEFAULT_RUN,
  fieldFromDetail,
  requireFinetuned,
  runEdit,
  ValidationError,
  type EditOutcome,
} from './console.js';
import { hashHex } from './hash.js';
import { pollJob } from './jobs.js';
import { parsePgm, parsePpm, type PpmImage } from './netpbm.js';
import { composeOverlay, composePlain, cssColor, itemAt, itemColor } from './overlay.js';
import { BASE_WORDS } from './vocab.js';
import type { MaskEditDto, SampleRunDto } from './types.js';

type Tool = 'select' | 'brush' | 'erase' | 'drag' | 'swap';

interface AppState {
  client: ApiClient;
  editor: EditorState | null;
  image: PpmImage | null;
  tool: Tool;
  brushRadius: number;
  overlayOn: boolean;
  overlayAlpha: number;
  hovered: number;
  dragStart: [number, number] | null;
  strokePixels: Map<number, [number, number]>;
  /** last finished edit, feeding the before/after viewer */
  outcome: EditOutcome | null;
  busy: boolean;
}

const state: AppState = {
  client: new ApiClient(''),
  editor: null,
  image: null,
  tool: 'select',
  brushRadius: 1,
  overlayOn: true,
  overlayAlpha: 0.45,
  hovered: -1,
  dragStart: null,
  strokePixels: new Map(),
  outcome: null,
  busy: false,
};

function $<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

// ------------------------------------------------------------ errors

function clearError(): void {
  const panel = $('error-panel');
  panel.textContent = '';
  panel.classList.add('hidden');
  document.querySelectorAll('.field-error').forEach((el) => {
    el.classList.remove('field-error');
  });
}

function showError(err: unknown): void {
  const panel = $('error-panel');
  panel.classList.remove('hidden');
  let field = '';
  if (err instanceof ValidationError) {
    field = err.field;
    panel.textContent = err.message;
  } else if (err instanceof ApiError) {
    // server text goes out verbatim; only the highlight is inferred
    field = fieldFromDetail(err.detail);
    panel.textContent = err.detail;
  } else if (err instanceof ToolBlockedError || err instanceof BusyError) {
    panel.textContent = err.message;
  } else {
    panel.textContent = String(err);
  }
  if (field) {
    const el = document.querySelector(`[data-field="${field}"]`);
    el?.classList.add('field-error');
  }
}

async function guarded(fn: () => Promise<void>): Promise<void> {
  if (state.busy) {
    showError(new BusyError('another request is already in flight'));
    return;
  }
  clearError();
  state.busy = true;
  try {
    await fn();
  } catch (err) {
    showError(err);
  } finally {
    state.busy = false;
    render();
  }
}

// ------------------------------------------------------------ canvas

const SCALE = 12; // device pixels per image pixel

function canvasPixel(ev: MouseEvent, canvas: HTMLCanvasElement): [number, number] {
  const rect = canvas.getBoundingClientRect();
  const col = Math.floor((ev.clientX - rect.left) / rect.width * canvas.width / SCALE);
  const row = Math.floor((ev.clientY - rect.top) / rect.height * canvas.height / SCALE);
  return [row, col];
}

function drawBuffer(canvas: HTMLCanvasElement, rgba: Uint8ClampedArray,
                    width: number, height: number): void {
  canvas.width = width * SCALE;
  canvas.height = height * SCALE;
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  const small = new OffscreenCanvas(width, height);
  const sctx = small.getContext('2d');
  if (!sctx) return;
  sctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), width, height), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(small, 0, 0, canvas.width, canvas.height);
}

function render(): void {
  const canvas = $<HTMLCanvasElement>('mask-canvas');
  if (!state.editor || !state.image) return;
  const part = state.editor.preview;
  const rgba = state.overlayOn
    ? composeOverlay(state.image, part, {
        alpha: state.overlayAlpha,
        hovered: state.hovered >= 0 ? state.hovered : undefined,
        selected: state.editor.selected ?? undefined,
      })
    : composePlain(state.image);
  drawBuffer(canvas, rgba, part.width, part.height);
  renderLegend();
  renderPending();
  renderStatus();
}

function renderLegend(): void {
  const legend = $('legend');
  legend.textContent = '';
  if (!state.editor) return;
  const counts = new Array(state.editor.preview.nItems).fill(0);
  for (const l of state.editor.preview.labels) counts[l] += 1;
  for (let i = 0; i < state.editor.preview.nItems; i++) {
    const row = document.createElement('div');
    row.className = 'legend-row' + (state.editor.selected === i ? ' selected' : '');
    const chip = document.createElement('span');
    chip.className = 'chip';
    chip.style.background = cssColor(itemColor(i));
    row.appendChild(chip);
    const label = document.createElement('span');
    label.textContent = `item ${i} (${counts[i]} px)`;
    row.appendChild(label);
    row.addEventListener('click', () => {
      if (state.editor) selectItem(state.editor, i);
      render();
    });
    legend.appendChild(row);
  }
}

function describeEdit(e: MaskEditDto): string {
  switch (e.kind) {
    case 'translate': return `translate item ${e.item_id} by (${e.dx}, ${e.dy})`;
    case 'scale': return `scale item ${e.item_id} by ${e.factor}`;
    case 'paint': return `${e.polarity} ${e.pixels?.length ?? 0} px on item ${e.item_id}`;
    case 'swap': return `swap items ${e.item_id} and ${e.other_item}`;
  }
}

function renderPending(): void {
  const list = $('pending-list');
  list.textContent = '';
  if (!state.editor) return;
  for (const e of state.editor.pending) {
    const li = document.createElement('li');
    li.textContent = describeEdit(e);
    list.appendChild(li);
  }
}

function renderStatus(): void {
  if (!state.editor) return;
  $('project-status').textContent =
    `${state.editor.manifest.id}: ${state.editor.manifest.status}` +
    (state.busy ? ' (request in flight)' : '');
}

// ------------------------------------------------------- project load

async function loadProject(pid: string): Promise<void> {
  const manifest = await state.client.getProject(pid);
  const rid = ApiClient.originalResultId(manifest);
  let imageBytes: Uint8Array;
  let maskBytes: Uint8Array;
  try {
    imageBytes = await state.client.resultImage(rid);
    maskBytes = await state.client.resultMask(rid);
  } catch (err) {
    throw new ApiError(500, `project assets unavailable: ${String(err)}`);
  }
  // malformed payloads surface in the error panel; the app stays up
  state.image = parsePpm(imageBytes);
  const mask = parsePgm(maskBytes, manifest.n_items);
  if (state.editor && state.editor.manifest.id === pid) {
    loadFromServer(state.editor, manifest, mask);
  } else {
    state.editor = createEditor(manifest, mask);
  }
}

async function onCreateProject(): Promise<void> {
  const imageFile = $<HTMLInputElement>('upload-image').files?.[0];
  const maskFile = $<HTMLInputElement>('upload-mask').files?.[0];
  if (!imageFile || !maskFile) {
    throw new ValidationError('upload', 'choose both an image (.ppm) and a mask (.pgm)');
  }
  const image = new Uint8Array(await imageFile.arrayBuffer());
  const mask = new Uint8Array(await maskFile.arrayBuffer());
  parsePpm(image); // reject malformed uploads before they leave the browser
  parsePgm(mask);
  const created = await state.client.createProject(image, mask);
  await loadProject(created.project_id);
}

// ------------------------------------------------------------- tools

function strokeAround(row: number, col: number): void {
  if (!state.editor) return;
  const r = state.brushRadius;
  for (let dr = -r + 1; dr < r; dr++) {
    for (let dc = -r + 1; dc < r; dc++) {
      const rr = row + dr;
      const cc = col + dc;
      if (rr < 0 || rr >= state.editor.preview.height) continue;
      if (cc < 0 || cc >= state.editor.preview.width) continue;
      state.strokePixels.set(rr * state.editor.preview.width + cc, [rr, cc]);
    }
  }
}

function onCanvasDown(ev: MouseEvent): void {
  if (!state.editor) return;
  const canvas = $<HTMLCanvasElement>('mask-canvas');
  const [row, col] = canvasPixel(ev, canvas);
  clearError();
  try {
    if (state.tool === 'select') {
      const item = itemAt(state.editor.preview, row, col);
      selectItem(state.editor, item >= 0 ? item : null);
    } else if (state.tool === 'brush' || state.tool === 'erase') {
      state.strokePixels.clear();
      strokeAround(row, col);
    } else if (state.tool === 'drag') {
      state.dragStart = [row, col];
    } else if (state.tool === 'swap') {
      const other = itemAt(state.editor.preview, row, col);
      if (other >= 0) swapWith(state.editor, other);
    }
  } catch (err) {
    showError(err);
  }
  render();
}

function onCanvasMove(ev: MouseEvent): void {
  if (!state.editor) return;
  const canvas = $<HTMLCanvasElement>('mask-canvas');
  const [row, col] = canvasPixel(ev, canvas);
  state.hovered = itemAt(state.editor.preview, row, col);
  if ((state.tool === 'brush' || state.tool === 'erase') && ev.buttons === 1) {
    strokeAround(row, col);
  }
  render();
}

function onCanvasUp(ev: MouseEvent): void {
  if (!state.editor) return;
  const canvas = $<HTMLCanvasElement>('mask-canvas');
  const [row, col] = canvasPixel(ev, canvas);
  clearError();
  try {
    if (state.tool === 'brush' || state.tool === 'erase') {
      const pixels = [...state.strokePixels.values()];
      state.strokePixels.clear();
      brush(state.editor, pixels, state.tool === 'brush' ? 'add' : 'erase');
    } else if (state.tool === 'drag' && state.dragStart) {
      const [r0, c0] = state.dragStart;
      state.dragStart = null;
      dragTranslate(state.editor, col - c0, row - r0);
    }
  } catch (err) {
    showError(err);
  }
  render();
}

function onScaleApply(): void {
  if (!state.editor) return;
  clearError();
  try {
    const factor = Number($<HTMLInputElement>('scale-factor').value);
    const sel = state.editor.selected;
    if (sel === null) throw new ToolBlockedError('select an item to scale');
    // anchor at the item's centroid so resizing feels in-place
    let sr = 0, sc = 0, n = 0;
    const p = state.editor.preview;
    for (let i = 0; i < p.labels.length; i++) {
      if (p.labels[i] === sel) {
        sr += Math.floor(i / p.width);
        sc += i % p.width;
        n += 1;
      }
    }
    if (n === 0) throw new ToolBlockedError(`item ${sel} has no pixels`);
    scaleTo(state.editor, factor, [Math.round(sr / n), Math.round(sc / n)]);
  } catch (err) {
    showError(err);
  }
  render();
}

// ----------------------------------------------------------- submits

function currentRun(): SampleRunDto {
  return {
    seed: Number($<HTMLInputElement>('run-seed').value) || DEFAULT_RUN.seed,
    steps: Number($<HTMLInputElement>('run-steps').value) || DEFAULT_RUN.steps,
    guidance_scale:
      Number($<HTMLInputElement>('run-guidance').value) || DEFAULT_RUN.guidance_scale,
    sampler: $<HTMLSelectElement>('run-sampler').value === 'ddim' ? 'ddim' : 'euler',
  };
}

function selectedWords(pickerId: string): string[] {
  return [...document.querySelectorAll(`#${pickerId} input:checked`)]
    .map((el) => (el as HTMLInputElement).value);
}

async function onSubmitMask(): Promise<void> {
  if (!state.editor) return;
  if (state.editor.manifest.status === 'awaiting-finetune') {
    await submitMaskUpdate(state.editor, state.client);
    await loadProject(state.editor.manifest.id);
  } else {
    requireFinetuned(state.editor.manifest);
    const request = buildMaskEditRequest(state.editor, currentRun());
    const outcome = await runEdit(state.client, state.editor.manifest.id, request);
    showOutcome(outcome);
  }
}

async function onFinetune(): Promise<void> {
  if (!state.editor) return;
  const cfg = {
    stage1_steps: Number($<HTMLInputElement>('ft-stage1').value) || undefined,
    stage2_steps: Number($<HTMLInputElement>('ft-stage2').value) || undefined,
    seed: Number($<HTMLInputElement>('ft-seed').value) || 0,
  };
  const { job_id } = await state.client.startFinetune(state.editor.manifest.id, cfg);
  const progress = $('ft-progress');
  await pollJob(state.client, job_id, {
    onUpdate: (job) => {
      const tail = job.loss_trace?.at(-1);
      progress.textContent = `finetune ${job.status}` +
        (tail ? ` step ${tail[0]} loss ${tail[1].toFixed(4)}` : '');
    },
  });
  await loadProject(state.editor.manifest.id);
}

function showOutcome(outcome: EditOutcome): void {
  state.outcome = outcome;
  const after = parsePpm(outcome.image);
  const rgba = composePlain(after);
  drawBuffer($<HTMLCanvasElement>('after-canvas'), rgba, after.width, after.height);
  if (state.image) {
    drawBuffer($<HTMLCanvasElement>('before-canvas'), composePlain(state.image),
               state.image.width, state.image.height);
  }
  $('result-hash').textContent = `result ${outcome.resultId} sha=${hashHex(outcome.image)}`;
  const m = outcome.metrics;
  $('metrics').textContent = m
    ? `color distance ${m.mean_color_distance.toFixed(4)}, ` +
      `untouched MSE ${m.untouched_mse.toFixed(4)}, IoU ${m.iou.toFixed(3)}, ` +
      `centroid (${m.centroid[0].toFixed(1)}, ${m.centroid[1].toFixed(1)}), ` +
      `area ${m.area}`
    : 'no region metrics for this edit';
  $('refine-mask').toggleAttribute(
    'disabled', outcome.job.kind !== 'edit' || !outcome.mask.length);
}

function onSwipe(): void {
  const pos = Number($<HTMLInputElement>('swipe').value);
  $<HTMLCanvasElement>('after-canvas').style.clipPath =
    `inset(0 ${100 - pos}% 0 0)`;
}

function onRefineMask(): void {
  // Fig-7-style loop: the pending buffer that produced this result is
  // still in place, so the mask tab already previews the result's
  // segmentation; just surface it.
  $<HTMLElement>('mask-tab').scrollIntoView();
}

// ------------------------------------------------------------ wiring

function wordPicker(containerId: string): void {
  const box = $(containerId);
  for (const w of BASE_WORDS) {
    const label = document.createElement('label');
    const input = document.createElement('input');
    input.type = 'checkbox';
    input.value = w;
    label.appendChild(input);
    label.appendChild(document.createTextNode(w));
    box.appendChild(label);
  }
}

export function initApp(): void {
  state.client = new ApiClient(window.location.origin);
  wordPicker('text-words');
  wordPicker('interp-words');

  const canvas = $<HTMLCanvasElement>('mask-canvas');
  canvas.addEventListener('mousedown', onCanvasDown);
  canvas.addEventListener('mousemove', onCanvasMove);
  canvas.addEventListener('mouseup', onCanvasUp);

  $('create-project').addEventListener('click', () => void guarded(onCreateProject));
  $('load-project').addEventListener('click', () => void guarded(async () => {
    await loadProject($<HTMLInputElement>('project-id').value.trim());
  }));
  for (const tool of ['select', 'brush', 'erase', 'drag', 'swap'] as Tool[]) {
    $(`tool-${tool}`).addEventListener('click', () => {
      state.tool = tool;
      render();
    });
  }
  $('brush-radius').addEventListener('input', (ev) => {
    state.brushRadius = Number((ev.target as HTMLInputElement).value);
  });
  $('overlay-toggle').addEventListener('change', (ev) => {
    state.overlayOn = (ev.target as HTMLInputElement).checked;
    render();
  });
  $('overlay-alpha').addEventListener('input', (ev) => {
    state.overlayAlpha = Number((ev.target as HTMLInputElement).value);
    render();
  });
  $('scale-apply').addEventListener('click', onScaleApply);
  $('discard-pending').addEventListener('click', () => {
    if (state.editor) discardPending(state.editor);
    render();
  });
  $('submit-mask').addEventListener('click', () => void guarded(onSubmitMask));
  $('start-finetune').addEventListener('click', () => void guarded(onFinetune));

  $('run-reconstruct').addEventListener('click', () => void guarded(async () => {
    if (!state.editor) return;
    requireFinetuned(state.editor.manifest);
    const outcome = await runEdit(state.client, state.editor.manifest.id,
                                  buildReconstruct(currentRun()));
    showOutcome(outcome);
  }));
  $('run-text').addEventListener('click', () => void guarded(async () => {
    if (!state.editor) return;
    requireFinetuned(state.editor.manifest);
    const item = state.editor.selected;
    if (item === null) throw new ValidationError('target_item', 'select an item first');
    const req = buildTextEdit(state.editor.manifest, item, selectedWords('text-words'),
                              $<HTMLInputElement>('text-combine').checked, currentRun());
    showOutcome(await runEdit(state.client, state.editor.manifest.id, req));
  }));
  $('run-remove').addEventListener('click', () => void guarded(async () => {
    if (!state.editor) return;
    requireFinetuned(state.editor.manifest);
    const item = state.editor.selected;
    if (item === null) throw new ValidationError('target_item', 'select an item first');
    const req = buildRemove(state.editor.manifest, item, currentRun());
    showOutcome(await runEdit(state.client, state.editor.manifest.id, req));
  }));
  $('run-interpolate').addEventListener('click', () => void guarded(async () => {
    if (!state.editor) return;
    requireFinetuned(state.editor.manifest);
    const item = state.editor.selected;
    if (item === null) throw new ValidationError('target_item', 'select an item first');
    const alpha = Number($<HTMLInputElement>('interp-alpha').value);
    const req = buildInterpolate(state.editor.manifest, item, alpha,
                                 { words: selectedWords('interp-words') }, currentRun());
    showOutcome(await runEdit(state.client, state.editor.manifest.id, req));
  }));
  $('swipe').addEventListener('input', onSwipe);
  $('refine-mask').addEventListener('click', onRefineMask);
}

if (typeof document !== 'undefined' && document.readyState !== 'loading') {
  initApp();
} else if (typeof document !== 'undefined') {
  document.addEventListener('DOMContentLoaded', initApp);
}
