/**
 * Edit console: builds edit requests from panel state, submits them,
 * and waits for the artifacts. Everything the server would reject for
 * shape reasons is caught here first, so the panels can highlight the
 * offending field before any request goes out; errors the server does
 * return are surfaced verbatim with a best-effort field attribution.
 */

import { ApiClient, ApiError } from './api.js';
import { pollJob, type PollOptions } from './jobs.js';
import { unknownWords } from './vocab.js';
import type {
  EditRequestDto,
  JobView,
  ProjectManifest,
  RegionMetrics,
  SampleRunDto,
} from './types.js';

export class ValidationError extends Error {
  /** panel field to highlight */
  field: string;

  constructor(field: string, message: string) {
    super(message);
    this.field = field;
  }
}

export const DEFAULT_RUN: Required<SampleRunDto> = {
  seed: 0,
  steps: 20,
  guidance_scale: 3.0,
  sampler: 'euler',
};

export function requireFinetuned(manifest: ProjectManifest): void {
  if (manifest.status !== 'done') {
    throw new ValidationError(
      'project',
      `project ${manifest.id} is ${manifest.status}; finish finetuning before editing`);
  }
}

function checkItem(manifest: ProjectManifest, field: string, item: number): void {
  if (!Number.isInteger(item) || item < 0 || item >= manifest.n_items) {
    throw new ValidationError(field, `item ${item} outside [0, ${manifest.n_items})`);
  }
}

function checkRun(run: SampleRunDto): void {
  if (!Number.isInteger(run.seed)) {
    throw new ValidationError('seed', `seed must be an integer, got ${run.seed}`);
  }
  if (run.steps !== undefined && (!Number.isInteger(run.steps) || run.steps < 1)) {
    throw new ValidationError('steps', `steps must be a positive integer, got ${run.steps}`);
  }
  if (run.guidance_scale !== undefined && !(run.guidance_scale >= 0)) {
    throw new ValidationError('guidance_scale',
                              `guidance scale must be nonnegative, got ${run.guidance_scale}`);
  }
}

// ------------------------------------------------------------ builders

export function buildReconstruct(run: SampleRunDto): EditRequestDto {
  checkRun(run);
  return { kind: 'reconstruct', run };
}

export function buildTextEdit(manifest: ProjectManifest, item: number,
                              words: string[], combine: boolean,
                              run: SampleRunDto): EditRequestDto {
  checkItem(manifest, 'target_item', item);
  checkRun(run);
  if (words.length === 0) {
    throw new ValidationError('words', 'pick at least one word');
  }
  const unknown = unknownWords(words);
  if (unknown.length > 0) {
    // the picker only offers vocabulary words, so this fires only on
    // free-typed input
    throw new ValidationError('words', `not in the vocabulary: ${unknown.join(', ')}`);
  }
  return { kind: 'text', run, target_item: item, words, combine };
}

export function buildImageEdit(manifest: ProjectManifest, item: number,
                               referenceProject: string, referenceItem: number,
                               run: SampleRunDto): EditRequestDto {
  checkItem(manifest, 'target_item', item);
  checkRun(run);
  if (!referenceProject) {
    throw new ValidationError('reference_project', 'pick a reference project');
  }
  if (!Number.isInteger(referenceItem) || referenceItem < 0) {
    throw new ValidationError('reference_item', 'pick a reference item');
  }
  if (!manifest.pair || manifest.pair.partner !== referenceProject) {
    throw new ValidationError(
      'reference_project',
      `project ${manifest.id} is not pair-finetuned with ${referenceProject}; ` +
      `run a pair finetune first`);
  }
  return {
    kind: 'image',
    run,
    target_item: item,
    reference_project: referenceProject,
    reference_item: referenceItem,
  };
}

export function buildRemove(manifest: ProjectManifest, item: number,
                            run: SampleRunDto): EditRequestDto {
  checkItem(manifest, 'target_item', item);
  checkRun(run);
  if (manifest.n_items < 2) {
    throw new ValidationError('target_item', 'cannot remove the last item');
  }
  return { kind: 'remove', run, target_item: item };
}

export interface InterpolationGuide {
  words?: string[];
  referenceProject?: string;
  referenceItem?: number;
}

export function buildInterpolate(manifest: ProjectManifest, item: number,
                                 alpha: number, guide: InterpolationGuide,
                                 run: SampleRunDto): EditRequestDto {
  checkItem(manifest, 'target_item', item);
  checkRun(run);
  if (!(alpha >= 0 && alpha <= 1)) {
    throw new ValidationError('alpha', `alpha must lie in [0, 1], got ${alpha}`);
  }
  const hasWords = (guide.words?.length ?? 0) > 0;
  const hasRef = guide.referenceItem !== undefined && guide.referenceItem >= 0;
  if (hasWords === hasRef) {
    throw new ValidationError('guide', 'pick exactly one guide: words or a reference item');
  }
  const req: EditRequestDto = { kind: 'interpolate', run, target_item: item, alpha };
  if (hasWords) {
    const unknown = unknownWords(guide.words!);
    if (unknown.length > 0) {
      throw new ValidationError('guide', `not in the vocabulary: ${unknown.join(', ')}`);
    }
    // blending happens after encoding, so the guide must encode to the
    // same width as the item's learned prompt
    const entry = manifest.items.find((it) => it.id === item);
    if (entry && guide.words!.length !== entry.token_ids.length) {
      throw new ValidationError(
        'guide',
        `item ${item} blends ${entry.token_ids.length} learned tokens; ` +
        `pick exactly ${entry.token_ids.length} guide words, got ${guide.words!.length}`);
    }
    req.guide_words = guide.words;
  } else {
    if (!guide.referenceProject) {
      throw new ValidationError('guide', 'pick the reference project for the guide item');
    }
    req.reference_project = guide.referenceProject;
    req.reference_item = guide.referenceItem;
  }
  return req;
}

// ------------------------------------------------------------- submit

export interface EditOutcome {
  job: JobView;
  resultId: string;
  image: Uint8Array;
  mask: Uint8Array;
  metrics: RegionMetrics | null;
}

/**
 * Submit one edit request and wait for its artifacts: exactly one POST
 * plus read-only polling and downloads.
 */
export async function runEdit(client: ApiClient, projectId: string,
                              request: EditRequestDto,
                              poll: PollOptions = {}): Promise<EditOutcome> {
  const { job_id } = await client.submitEdit(projectId, request);
  const job = await pollJob(client, job_id, poll);
  const refs = job.result_refs ?? [];
  if (refs.length === 0) {
    throw new ApiError(500, `job ${job_id} finished without results`);
  }
  const rid = refs[refs.length - 1].result_id;
  const image = await client.resultImage(rid);
  const mask = await client.resultMask(rid);
  const metrics = await client.resultMetrics(rid);
  return { job, resultId: rid, image, mask, metrics };
}

/**
 * Map a server validation message onto the console field to highlight.
 * Falls back to the generic request field when nothing matches; the
 * message itself is always shown unedited.
 */
export function fieldFromDetail(detail: string): string {
  const rules: Array<[RegExp, string]> = [
    [/alpha/i, 'alpha'],
    [/guide/i, 'guide'],
    [/word/i, 'words'],
    [/reference project/i, 'reference_project'],
    [/reference item/i, 'reference_item'],
    [/target item|item \d+ outside/i, 'target_item'],
    [/steps/i, 'steps'],
    [/guidance/i, 'guidance_scale'],
    [/sampler/i, 'sampler'],
    [/seed/i, 'seed'],
  ];
  for (const [re, field] of rules) {
    if (re.test(detail)) return field;
  }
  return 'request';
}
