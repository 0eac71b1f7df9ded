/** Shared shapes of the service's JSON documents and event payloads. */

export type JobStatusValue =
  | "pending"
  | "stage1_running"
  | "awaiting_selection"
  | "stage2_running"
  | "done"
  | "failed";

export type JobMode = "auto" | "interactive";

/** GET /vocab returns {"0": {"name": ..., "color": [r,g,b]}, ...}. */
export type VocabDoc = Record<string, { name: string; color: number[] }>;

export interface VocabEntry {
  id: number;
  name: string;
  /** 0..1 floats, as served. */
  color: [number, number, number];
}

export function parseVocab(doc: VocabDoc): VocabEntry[] {
  const entries = Object.entries(doc).map(([id, body]) => ({
    id: Number(id),
    name: body.name,
    color: [body.color[0], body.color[1], body.color[2]] as [
      number,
      number,
      number,
    ],
  }));
  entries.sort((a, b) => a.id - b.id);
  return entries;
}

export interface LossWeightsDoc {
  alpha_clip: number;
  alpha_seg: number[];
}

export interface OptimizerDoc {
  max_steps: number;
  step_size: number;
  plateau_patience: number;
  plateau_tolerance: number;
  momentum: number;
  normalize: boolean;
}

export interface RefineDoc {
  strength: number;
  steps: number;
  output_width: number | null;
  output_height: number | null;
}

export interface Stage1Entry {
  id: string;
  seed: number;
  final_loss: number;
  artifact: string | null;
}

export interface Stage2Entry {
  id: string;
  source_id: string;
  seed: number;
  strength: number;
  steps: number;
  artifact: string | null;
}

export interface JobDoc {
  id: string;
  prompt: string;
  status: JobStatusValue;
  mode: JobMode;
  seed: number;
  n_stage1: number;
  n_stage2_per_stage1: number;
  weights: LossWeightsDoc;
  optimizer: OptimizerDoc;
  refine: RefineDoc;
  error: string | null;
  failed_stage: number | null;
  stage1: Stage1Entry[];
  stage2: Stage2Entry[];
  mask_artifact: string | null;
}

/** POST /jobs payload; omitted fields take the server's defaults. */
export interface JobSpec {
  prompt: string;
  mask_b64: string;
  mode?: JobMode;
  seed?: number;
  weights?: { alpha_clip?: number; alpha_seg?: number[] };
  optimizer?: Partial<OptimizerDoc>;
  refine?: { strength?: number; steps?: number };
  fan_out?: { n_stage1?: number; n_stage2_per_stage1?: number };
}

export interface RefineOverride {
  strength?: number;
  steps?: number;
}

export type JobEvent =
  | {
      type: "status";
      status: JobStatusValue;
      error?: string;
      failed_stage?: number;
    }
  | {
      type: "loss";
      run: number;
      step: number;
      l_clip: number;
      l_segs: number[];
      l_total: number;
    }
  | {
      type: "candidate";
      stage: 1;
      id: string;
      artifact: string;
      final_loss: number;
    }
  | {
      type: "candidate";
      stage: 2;
      id: string;
      artifact: string;
      source_id: string;
      strength: number;
    }
  | { type: "terminal"; status: JobStatusValue };

export interface Violation {
  field: string;
  message: string;
}
