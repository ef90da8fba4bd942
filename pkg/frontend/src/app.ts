import { ApiError, ServiceClient } from './api.js';
import { createComposer } from './composer.js';
import { watchJob } from './jobs.js';
import { createResultsColumn } from './results.js';
import { renderSeedReport } from './seedView.js';
import {
  type PendingJob,
  type ResultPanel,
  type SelectedToken,
  type SessionState,
  SESSION_KEY,
  loadSession,
  resolvableSelection,
  saveSession,
  selectionTreeIds,
} from './session.js';
import { renderTreeView, type TreeViewHandle } from './treeView.js';
import type { GenerateResult, JobEvent, TreeDetail, TreeSummary } from './types.js';

export interface AppDeps {
  client: ServiceClient;
  storage: Storage;
  /** Job follow-up interval; tests shrink it. */
  pollIntervalMs?: number;
  /** EventSource constructor for live job streams; omit to poll. */
  eventSource?: typeof EventSource;
}

export interface AppHandle {
  element: HTMLElement;
  /** Settles once trees, selection, and panels from the last session are back. */
  ready: Promise<void>;
}

const GENERATE_COUNT = 4;

function describeEvent(event: JobEvent): string | null {
  switch (event.event) {
    case 'split-started':
      return `splitting node ${event.node_id}`;
    case 'training-progress':
      return `step ${event.step}` + (event.loss != null ? `, loss ${Number(event.loss).toExponential(2)}` : '');
    case 'candidate-scored':
      return `seed ${event.seed} scored`;
    case 'seed-chosen':
      return `seed ${event.seed} chosen, final training`;
    case 'split-scored':
      return 'scoring final pair';
    default:
      return null;
  }
}

/**
 * Wire the whole explorer into `root`: tree picker, per-tree views with
 * galleries and split buttons, the prompt composer, and the results column.
 * Session state persists to `deps.storage` on every change and is restored
 * on the next load; tree content itself always comes from the service.
 */
export function createApp(root: HTMLElement, deps: AppDeps): AppHandle {
  const { client, storage } = deps;
  const session: SessionState = loadSession(storage);
  const details = new Map<string, TreeDetail>();
  const views = new Map<string, TreeViewHandle>();
  let summaries: TreeSummary[] = [];

  root.innerHTML = `
    <div class="app">
      <header class="app-header">
        <h1>concepttree explorer</h1>
        <span class="health-line"></span>
      </header>
      <div class="app-error" hidden></div>
      <main class="app-main">
        <div class="tree-column">
          <nav class="tree-picker"></nav>
          <div class="tree-views"></div>
        </div>
        <aside class="side-column"></aside>
      </main>
    </div>
  `;
  const healthLine = root.querySelector('.health-line') as HTMLElement;
  const appError = root.querySelector('.app-error') as HTMLElement;
  const picker = root.querySelector('.tree-picker') as HTMLElement;
  const treeViews = root.querySelector('.tree-views') as HTMLElement;
  const sideColumn = root.querySelector('.side-column') as HTMLElement;

  const showAppError = (message: string | null) => {
    appError.hidden = message === null;
    appError.textContent = message ?? '';
  };

  const persist = () => saveSession(storage, session);

  const results = createResultsColumn({
    resolveUrl: (url) => client.resolve(url),
    onReuse: (panel) => {
      // Tokens whose tree is no longer loaded cannot be resubmitted; drop them.
      session.selected = panel.tokens.flatMap((token) => {
        const treeId = findTokenTree(token);
        return treeId === null ? [] : [{ token, treeId }];
      });
      composer.setSelection(session.selected);
      composer.setTemplate(panel.template);
      session.template = panel.template;
      persist();
    },
  });

  const composer = createComposer({
    onChange(selected, template) {
      session.selected = selected;
      session.template = template;
      persist();
    },
    onGenerate(selected, template) {
      void runGenerate(selected, template);
    },
  });

  sideColumn.appendChild(composer.element);
  sideColumn.appendChild(results.element);

  function findTokenTree(token: string): string | null {
    for (const [treeId, detail] of details) {
      if (detail.nodes.some((node) => node.token === token)) return treeId;
    }
    return null;
  }

  function renderPicker(): void {
    picker.innerHTML = '<h2>Trees</h2>';
    for (const summary of summaries) {
      const label = document.createElement('label');
      label.className = 'picker-row';
      const box = document.createElement('input');
      box.type = 'checkbox';
      box.checked = session.loadedTreeIds.includes(summary.tree_id);
      box.onchange = () => void toggleTree(summary.tree_id, box.checked);
      label.appendChild(box);
      label.appendChild(
        document.createTextNode(
          ` ${summary.tree_id} (${summary.node_count} nodes` +
            (summary.splitting ? ', splitting' : '') +
            ')',
        ),
      );
      picker.appendChild(label);
    }
  }

  function mountTreeView(detail: TreeDetail): void {
    details.set(detail.tree_id, detail);
    const handle = renderTreeView(detail, {
      onSelectToken: (token, treeId) => {
        composer.addToken(token, treeId);
      },
      onSplit: (nodeId) => void runSplit(detail.tree_id, nodeId),
      loadSamples: (nodeId) => client.getSamples(detail.tree_id, nodeId),
      resolveUrl: (url) => client.resolve(url),
    });

    const seedBtn = document.createElement('button');
    seedBtn.className = 'seed-report-button';
    seedBtn.textContent = 'Seed report';
    seedBtn.onclick = () => void toggleSeedReport(detail.tree_id, handle);
    (handle.element.querySelector('header') as HTMLElement).appendChild(seedBtn);

    const existing = views.get(detail.tree_id);
    if (existing !== undefined) {
      treeViews.replaceChild(handle.element, existing.element);
    } else {
      treeViews.appendChild(handle.element);
    }
    views.set(detail.tree_id, handle);
  }

  function unmountTreeView(treeId: string): void {
    const view = views.get(treeId);
    if (view !== undefined) {
      view.element.remove();
      views.delete(treeId);
    }
    details.delete(treeId);
  }

  async function toggleTree(treeId: string, loaded: boolean): Promise<void> {
    if (loaded) {
      if (!session.loadedTreeIds.includes(treeId)) session.loadedTreeIds.push(treeId);
      try {
        mountTreeView(await client.getTree(treeId));
        showAppError(null);
      } catch (err) {
        showAppError(err instanceof Error ? err.message : String(err));
      }
    } else {
      session.loadedTreeIds = session.loadedTreeIds.filter((id) => id !== treeId);
      unmountTreeView(treeId);
      session.selected = session.selected.filter((entry) => entry.treeId !== treeId);
      composer.setSelection(session.selected);
    }
    persist();
  }

  async function toggleSeedReport(treeId: string, view: TreeViewHandle): Promise<void> {
    const open = view.element.querySelector('.seed-reports');
    if (open !== null) {
      open.remove();
      return;
    }
    const holder = document.createElement('div');
    holder.className = 'seed-reports';
    try {
      const splits = await client.getManifestSplits(treeId);
      if (splits.length === 0) holder.textContent = 'no splits yet';
      for (const split of splits) holder.appendChild(renderSeedReport(split));
    } catch (err) {
      holder.textContent =
        'seed report unavailable: ' + (err instanceof Error ? err.message : String(err));
    }
    view.element.appendChild(holder);
  }

  async function refreshTree(treeId: string): Promise<void> {
    try {
      mountTreeView(await client.getTree(treeId));
    } catch (err) {
      showAppError(err instanceof Error ? err.message : String(err));
    }
  }

  function trackJob(job: PendingJob): void {
    session.pendingJobs.push(job);
    persist();
  }

  function untrackJob(jobId: string): void {
    session.pendingJobs = session.pendingJobs.filter((job) => job.jobId !== jobId);
    persist();
  }

  async function followSplit(treeId: string, jobId: string): Promise<void> {
    const view = views.get(treeId);
    view?.setProgress('split queued');
    view?.element
      .querySelectorAll<HTMLButtonElement>('.split-button')
      .forEach((btn) => (btn.disabled = true));
    try {
      await watchJob(client, jobId, {
        intervalMs: deps.pollIntervalMs,
        eventSource: deps.eventSource,
        onEvent: (event) => {
          const text = describeEvent(event);
          if (text !== null) view?.setProgress(text);
        },
      });
      view?.setProgress(null);
    } catch (err) {
      view?.setProgress(null);
      showAppError('split failed: ' + (err instanceof Error ? err.message : String(err)));
    }
    untrackJob(jobId);
    await refreshTree(treeId);
  }

  async function runSplit(treeId: string, nodeId: number): Promise<void> {
    showAppError(null);
    let jobId: string;
    try {
      const job = await client.startSplit(treeId, nodeId);
      jobId = job.job_id;
    } catch (err) {
      showAppError(err instanceof Error ? err.message : String(err));
      return;
    }
    trackJob({ jobId, kind: 'split', treeId });
    await followSplit(treeId, jobId);
  }

  function appendGenerateResult(jobId: string, tokens: string[], template: string): void {
    void client.getJob(jobId).then((job) => {
      if (job.state !== 'done' || job.result === null) return;
      if (session.panels.some((panel) => panel.jobId === jobId)) return;
      const result = job.result as unknown as GenerateResult;
      const panel: ResultPanel = {
        prompt: result.prompt,
        seed: result.seed,
        tokens,
        template,
        images: result.images,
        jobId,
      };
      session.panels.push(panel);
      results.append(panel);
      persist();
    });
  }

  async function runGenerate(selected: SelectedToken[], template: string): Promise<void> {
    composer.setBusy(true);
    composer.showError(null);
    const tokens = selected.map((entry) => entry.token);
    let jobId: string;
    try {
      const job = await client.generate({
        tree_ids: selectionTreeIds(selected),
        tokens,
        template,
        n: GENERATE_COUNT,
        seed: session.panels.length,
      });
      jobId = job.job_id;
    } catch (err) {
      composer.setBusy(false);
      composer.showError(
        err instanceof ApiError ? err.message : 'generation failed: ' + String(err),
      );
      return;
    }
    trackJob({ jobId, kind: 'generate', treeId: null });
    try {
      await watchJob(client, jobId, {
        intervalMs: deps.pollIntervalMs,
        eventSource: deps.eventSource,
      });
      appendGenerateResult(jobId, tokens, template);
    } catch (err) {
      composer.showError(err instanceof Error ? err.message : String(err));
    }
    untrackJob(jobId);
    composer.setBusy(false);
  }

  // A reload re-attaches to jobs that were still running; finished generate
  // jobs the session never saw still produce their panel.
  async function reattachPendingJobs(): Promise<void> {
    const pending = session.pendingJobs.slice();
    for (const entry of pending) {
      let state;
      try {
        state = (await client.getJob(entry.jobId)).state;
      } catch {
        untrackJob(entry.jobId);
        continue;
      }
      if (entry.kind === 'split' && entry.treeId !== null) {
        if (state === 'queued' || state === 'running') {
          void followSplit(entry.treeId, entry.jobId);
        } else {
          untrackJob(entry.jobId);
          await refreshTree(entry.treeId);
        }
      } else if (entry.kind === 'generate') {
        if (state === 'queued' || state === 'running') {
          void watchJob(client, entry.jobId, {
            intervalMs: deps.pollIntervalMs,
            eventSource: deps.eventSource,
          }).then(
            () => {
              appendGenerateResult(entry.jobId, [], '');
              untrackJob(entry.jobId);
            },
            () => untrackJob(entry.jobId),
          );
        } else {
          if (state === 'done') appendGenerateResult(entry.jobId, [], '');
          untrackJob(entry.jobId);
        }
      }
    }
  }

  async function boot(): Promise<void> {
    try {
      const health = await client.health();
      healthLine.textContent = `${health.trees} trees, backend ${health.backend ?? 'none'}`;
    } catch (err) {
      healthLine.textContent = 'service unreachable';
      showAppError(err instanceof Error ? err.message : String(err));
      return;
    }

    summaries = (await client.listTrees()).trees;
    const known = new Set(summaries.map((s) => s.tree_id));
    // Fresh session: load everything. Restored session: only what was loaded.
    const fresh = storage.getItem(SESSION_KEY) === null;
    session.loadedTreeIds = fresh
      ? summaries.map((s) => s.tree_id)
      : session.loadedTreeIds.filter((id) => known.has(id));
    renderPicker();

    for (const treeId of session.loadedTreeIds) {
      try {
        mountTreeView(await client.getTree(treeId));
      } catch (err) {
        showAppError(err instanceof Error ? err.message : String(err));
      }
    }

    // setSelection rewrites session.template through onChange, so keep the
    // text the user had before handing the selection over.
    const savedTemplate = session.template;
    session.selected = resolvableSelection(session.selected, details);
    composer.setSelection(session.selected);
    if (savedTemplate !== '') composer.setTemplate(savedTemplate);

    for (const panel of session.panels) results.append(panel);

    await reattachPendingJobs();
    persist();
  }

  return { element: root, ready: boot() };
}
