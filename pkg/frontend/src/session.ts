import type { GeneratedImage, TreeDetail } from './types.js';

// What survives a page reload. Tree content always comes back from the
// service; the session keeps only which trees are loaded, the user's token
// selection and template text, and pointers to generated results (the image
// URLs are served by the service, so panels rebuild from these references).

export interface ResultPanel {
  prompt: string;
  seed: number;
  tokens: string[];
  template: string;
  images: GeneratedImage[];
  jobId?: string;
}

export interface SelectedToken {
  token: string;
  treeId: string;
}

export interface PendingJob {
  jobId: string;
  kind: 'split' | 'generate';
  treeId: string | null;
}

export interface SessionState {
  loadedTreeIds: string[];
  selected: SelectedToken[];
  template: string;
  panels: ResultPanel[];
  pendingJobs: PendingJob[];
}

export const SESSION_KEY = 'concepttree-explorer/session';

export function emptySession(): SessionState {
  return { loadedTreeIds: [], selected: [], template: '', panels: [], pendingJobs: [] };
}

export function saveSession(storage: Storage, state: SessionState): void {
  storage.setItem(SESSION_KEY, JSON.stringify(state));
}

export function loadSession(storage: Storage): SessionState {
  const raw = storage.getItem(SESSION_KEY);
  if (raw === null) return emptySession();
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch {
    return emptySession();
  }
  if (typeof parsed !== 'object' || parsed === null) return emptySession();
  const candidate = parsed as Partial<SessionState>;
  return {
    loadedTreeIds: Array.isArray(candidate.loadedTreeIds)
      ? candidate.loadedTreeIds.filter((id): id is string => typeof id === 'string')
      : [],
    selected: Array.isArray(candidate.selected)
      ? candidate.selected.filter(
          (entry): entry is SelectedToken =>
            typeof entry === 'object' &&
            entry !== null &&
            typeof (entry as SelectedToken).token === 'string' &&
            typeof (entry as SelectedToken).treeId === 'string',
        )
      : [],
    template: typeof candidate.template === 'string' ? candidate.template : '',
    panels: Array.isArray(candidate.panels) ? (candidate.panels as ResultPanel[]) : [],
    pendingJobs: Array.isArray(candidate.pendingJobs)
      ? (candidate.pendingJobs as PendingJob[]).filter(
          (job) => typeof job === 'object' && job !== null && typeof job.jobId === 'string',
        )
      : [],
  };
}

/** Tokens that still resolve against the loaded trees, in selection order. */
export function resolvableSelection(
  selected: SelectedToken[],
  trees: Map<string, TreeDetail>,
): SelectedToken[] {
  return selected.filter((entry) => {
    const tree = trees.get(entry.treeId);
    if (tree === undefined) return false;
    return tree.nodes.some((node) => node.token === entry.token);
  });
}

/** Distinct tree ids the selection draws from, in first-use order. */
export function selectionTreeIds(selected: SelectedToken[]): string[] {
  const seen = new Set<string>();
  const out: string[] = [];
  for (const entry of selected) {
    if (!seen.has(entry.treeId)) {
      seen.add(entry.treeId);
      out.push(entry.treeId);
    }
  }
  return out;
}
