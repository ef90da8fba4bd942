import type { NodeView, SampleListing, TreeDetail } from './types.js';

export interface TreeViewCallbacks {
  /** Node token clicked; add it to the composition. */
  onSelectToken?: (token: string, treeId: string) => void;
  /** Split button clicked on a splittable node. */
  onSplit?: (nodeId: number) => void;
  /** Gallery loader; omit to render without thumbnails. */
  loadSamples?: (nodeId: number) => Promise<SampleListing>;
  /** Maps a service-relative image URL to an absolute one. */
  resolveUrl?: (url: string) => string;
}

export interface TreeViewHandle {
  element: HTMLElement;
  /** Show or clear the live-job progress strip. */
  setProgress(text: string | null): void;
}

const THUMBNAILS_PER_NODE = 6;

function nodeLabel(node: NodeView, treeId: string): string {
  return node.status === 'root' ? treeId : `v${node.node_id}`;
}

function scoreBadges(node: NodeView): string {
  const parts: string[] = [];
  if (node.self_consistency !== null) {
    parts.push(`<span class="score-self">self ${node.self_consistency.toFixed(2)}</span>`);
  }
  if (node.sibling_cross_consistency !== null) {
    parts.push(
      `<span class="score-cross">cross ${node.sibling_cross_consistency.toFixed(2)}</span>`,
    );
  }
  return parts.join(' ');
}

/**
 * Render one tree as rows of node cards, one row per depth level. Each card
 * shows the node label, its status flag, self/cross consistency, a thumbnail
 * gallery, a token chip when the node has a learned token, and a split
 * button that is disabled whenever the service says the node cannot split.
 */
export function renderTreeView(
  detail: TreeDetail,
  callbacks: TreeViewCallbacks = {},
): TreeViewHandle {
  const element = document.createElement('section');
  element.className = 'tree-view';
  element.dataset.treeId = detail.tree_id;

  const header = document.createElement('header');
  header.innerHTML = `
    <h2>${detail.tree_id}</h2>
    <span class="tree-meta">${detail.nodes.length} nodes, depth ${detail.config.max_depth} max</span>
  `;
  element.appendChild(header);

  const progress = document.createElement('div');
  progress.className = 'tree-progress';
  progress.hidden = true;
  element.appendChild(progress);

  const byDepth = new Map<number, NodeView[]>();
  for (const node of detail.nodes) {
    const level = byDepth.get(node.depth) ?? [];
    level.push(node);
    byDepth.set(node.depth, level);
  }

  for (const depth of [...byDepth.keys()].sort((a, b) => a - b)) {
    const row = document.createElement('div');
    row.className = 'tree-level';
    for (const node of byDepth.get(depth)!.sort((a, b) => a.node_id - b.node_id)) {
      row.appendChild(renderNodeCard(node, detail, callbacks));
    }
    element.appendChild(row);
  }

  return {
    element,
    setProgress(text: string | null) {
      progress.hidden = text === null;
      progress.textContent = text ?? '';
    },
  };
}

function renderNodeCard(
  node: NodeView,
  detail: TreeDetail,
  callbacks: TreeViewCallbacks,
): HTMLElement {
  const card = document.createElement('article');
  card.className = 'node-card';
  card.dataset.nodeId = String(node.node_id);
  card.dataset.status = node.status;
  card.dataset.splittable = String(node.splittable);

  const flagged = node.status === 'leaf-incoherent' ? ' node-flagged' : '';
  card.innerHTML = `
    <div class="node-title${flagged}">
      <strong>${nodeLabel(node, detail.tree_id)}</strong>
      <span class="node-status">${node.status}</span>
    </div>
    <div class="node-scores">${scoreBadges(node)}</div>
    <div class="node-gallery"></div>
    <div class="node-actions"></div>
  `;

  const actions = card.querySelector('.node-actions') as HTMLElement;

  if (node.token !== null) {
    const chip = document.createElement('button');
    chip.className = 'token-chip';
    chip.textContent = node.token;
    chip.title = 'Add to composition';
    chip.onclick = () => callbacks.onSelectToken?.(node.token!, detail.tree_id);
    actions.appendChild(chip);
  }

  const splitBtn = document.createElement('button');
  splitBtn.className = 'split-button';
  splitBtn.textContent = 'Split';
  splitBtn.disabled = !node.splittable || detail.splitting;
  splitBtn.onclick = () => callbacks.onSplit?.(node.node_id);
  actions.appendChild(splitBtn);

  if (callbacks.loadSamples !== undefined && node.sample_count > 0) {
    const gallery = card.querySelector('.node-gallery') as HTMLElement;
    callbacks
      .loadSamples(node.node_id)
      .then((listing) => fillGallery(gallery, listing, callbacks.resolveUrl))
      .catch(() => {
        gallery.textContent = 'gallery unavailable';
      });
  }

  return card;
}

function fillGallery(
  gallery: HTMLElement,
  listing: SampleListing,
  resolveUrl?: (url: string) => string,
): void {
  for (const image of listing.images.slice(0, THUMBNAILS_PER_NODE)) {
    if (image.url === null) continue;
    const img = document.createElement('img');
    img.className = 'thumb';
    img.src = resolveUrl ? resolveUrl(image.url) : image.url;
    img.alt = image.prompt ?? image.image_id;
    img.loading = 'lazy';
    gallery.appendChild(img);
  }
}
