/**
 * Job polling with exponential backoff. Finetunes run minutes, edits
 * run seconds; backoff keeps the request rate sane for both without
 * per-kind tuning.
 */

import type { ApiClient } from './api.js';
import type { JobView } from './types.js';

export interface PollOptions {
  initialMs?: number;
  maxMs?: number;
  factor?: number;
  /** give up after this long; 0 disables the deadline */
  timeoutMs?: number;
  onUpdate?: (job: JobView) => void;
  /** injected in tests to avoid real waits */
  sleep?: (ms: number) => Promise<void>;
}

export class JobTimeoutError extends Error {}
export class JobFailedError extends Error {
  job: JobView;

  constructor(job: JobView) {
    super(job.error || `job ${job.job_id} failed`);
    this.job = job;
  }
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export const TERMINAL: ReadonlyArray<JobView['status']> = ['done', 'failed'];

/**
 * Poll one job until it reaches a terminal status. Resolves with the
 * final view on success; rejects with JobFailedError carrying the
 * server's inner error on failure.
 */
export async function pollJob(client: ApiClient, jobId: string,
                              opts: PollOptions = {}): Promise<JobView> {
  const initial = opts.initialMs ?? 250;
  const max = opts.maxMs ?? 4000;
  const factor = opts.factor ?? 1.6;
  const timeout = opts.timeoutMs ?? 0;
  const sleep = opts.sleep ?? defaultSleep;

  const started = Date.now();
  let wait = initial;
  for (;;) {
    const job = await client.getJob(jobId);
    opts.onUpdate?.(job);
    if (job.status === 'done') return job;
    if (job.status === 'failed') throw new JobFailedError(job);
    if (timeout > 0 && Date.now() - started > timeout) {
      throw new JobTimeoutError(`job ${jobId} still ${job.status} after ${timeout}ms`);
    }
    await sleep(wait);
    wait = Math.min(max, wait * factor);
  }
}
