// Wire types for the concepttree service. Field names mirror the JSON the
// service emits; keep them snake_case so payloads pass through untouched.

export type NodeStatus = 'root' | 'active' | 'leaf-stopped' | 'leaf-incoherent';

export type SplitDecision = 'split-ok' | 'leaf-not-distinct' | 'leaf-incoherent' | null;

export interface TreeSummary {
  tree_id: string;
  node_count: number;
  max_depth: number;
  splitting: boolean;
}

export interface TreeListing {
  trees: TreeSummary[];
}

export interface NodeView {
  node_id: number;
  parent_id: number | null;
  child_ids: number[];
  token: string | null;
  status: NodeStatus;
  self_consistency: number | null;
  sibling_cross_consistency: number | null;
  depth: number;
  splittable: boolean;
  sample_count: number;
}

export interface SplitView {
  parent_node_id: number;
  decision: SplitDecision;
  chosen_seed: number | null;
  child_ids: number[];
}

export interface TreeDetail {
  tree_id: string;
  config: {
    max_depth: number;
    children_per_node: number;
    k_seeds: number[];
    train_template: string;
  };
  nodes: NodeView[];
  splits: SplitView[];
  splitting: boolean;
}

export interface SampleImage {
  image_id: string;
  source: 'user' | 'generated';
  seed: number | null;
  prompt: string | null;
  url: string | null;
}

export interface SampleListing {
  tree_id: string;
  node_id: number;
  images: SampleImage[];
}

export type JobState = 'queued' | 'running' | 'done' | 'failed';

export interface JobView {
  job_id: string;
  kind: 'split' | 'generate';
  state: JobState;
  progress: { step: number | null; loss: number | null };
  result: Record<string, unknown> | null;
  error: string | null;
}

export interface JobEvent {
  event: string;
  job_id: string;
  [key: string]: unknown;
}

export interface GenerateRequest {
  tree_ids: string[];
  tokens: string[];
  template?: string;
  n?: number;
  seed?: number;
}

export interface GeneratedImage {
  image_id: string;
  file: string | null;
  url: string | null;
}

export interface GenerateResult {
  prompt: string;
  seed: number;
  images: GeneratedImage[];
}

// Per-split candidate scores, read from the archive manifest served under
// /trees/{id}/files/manifest.json. Only the scoring fields are typed here.
export interface CandidateReport {
  self_left: number;
  self_right: number;
  cross: number;
  objective: number;
}

export interface ManifestSplit {
  parent_node_id: number;
  candidate_reports: Record<string, CandidateReport>;
  failed_seeds: Record<string, string>;
  chosen_seed: number | null;
  final_report: CandidateReport | null;
  decision: string | null;
}
