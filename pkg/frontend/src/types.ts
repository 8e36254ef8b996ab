/** Server DTOs, mirrored from the HTTP API's JSON shapes. */

export interface ItemEntry {
  id: number;
  pixel_count: number;
  token_ids: number[];
}

export type ProjectStatus =
  | 'awaiting-finetune'
  | 'queued'
  | 'stage1'
  | 'stage2'
  | 'done'
  | 'failed';

export interface ProjectManifest {
  schema: number;
  id: string;
  status: ProjectStatus;
  error: string;
  n_items: number;
  tokens_per_item: number;
  items: ItemEntry[];
  checkpoint: string | null;
  pair: { pair_id: string; partner: string; role: string } | null;
  trace: string | null;
  history: unknown[];
  results: string[];
}

export interface RegionMetrics {
  mean_color_distance: number;
  untouched_mse: number;
  iou: number;
  centroid: [number, number];
  area: number;
}

export interface ResultRef {
  result_id: string;
  image: string;
  mask: string;
  metrics: string;
}

export type JobStatus = 'queued' | 'running' | 'stage1' | 'stage2' | 'done' | 'failed';

export interface JobView {
  job_id: string;
  kind: string;
  status: JobStatus;
  project_ids: string[];
  error?: string;
  loss_trace?: Array<[number, number]>;
  result_refs?: ResultRef[];
}

export type MaskEditKind = 'translate' | 'scale' | 'paint' | 'swap';

/** One segmentation edit, in the wire format the server accepts. */
export interface MaskEditDto {
  kind: MaskEditKind;
  item_id: number;
  dx?: number;
  dy?: number;
  factor?: number;
  anchor?: [number, number]; // (row, col)
  pixels?: Array<[number, number]>; // (row, col)
  polarity?: 'add' | 'erase';
  other_item?: number;
}

export interface SampleRunDto {
  seed: number;
  steps?: number;
  guidance_scale?: number;
  sampler?: 'euler' | 'ddim';
}

export type EditKind =
  | 'reconstruct'
  | 'text'
  | 'image'
  | 'mask'
  | 'remove'
  | 'interpolate';

export interface EditRequestDto {
  schema?: number;
  kind: EditKind;
  run: SampleRunDto;
  target_item?: number;
  words?: string[];
  combine?: boolean;
  mask_edits?: MaskEditDto[];
  alpha?: number;
  guide_words?: string[];
  reference_project?: string;
  reference_item?: number;
}

export interface FinetuneConfigDto {
  stage1_steps?: number;
  stage2_steps?: number;
  lr_stage1?: number;
  lr_stage2?: number;
  accumulation?: number;
  seed?: number;
}
