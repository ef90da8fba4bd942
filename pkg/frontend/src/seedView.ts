import type { ManifestSplit } from './types.js';

// Heatmap-style table of candidate seed scores for one split: a row per
// seed, shaded by score, with the chosen seed outlined. This is what
// justifies the seed the builder picked.

const COLUMNS = ['self_left', 'self_right', 'cross', 'objective'] as const;

function shade(value: number): string {
  const clamped = Math.max(0, Math.min(1, value));
  const hue = Math.round(clamped * 120);
  return `hsl(${hue}, 70%, 80%)`;
}

export function renderSeedReport(split: ManifestSplit): HTMLElement {
  const table = document.createElement('table');
  table.className = 'seed-report';
  table.dataset.parentNodeId = String(split.parent_node_id);

  const head = document.createElement('tr');
  head.innerHTML =
    '<th>seed</th>' + COLUMNS.map((c) => `<th>${c.replaceAll('_', ' ')}</th>`).join('');
  table.appendChild(head);

  const seeds = Object.keys(split.candidate_reports).sort(
    (a, b) => Number(a) - Number(b),
  );
  for (const seed of seeds) {
    const report = split.candidate_reports[seed]!;
    const row = document.createElement('tr');
    row.dataset.seed = seed;
    if (split.chosen_seed !== null && Number(seed) === split.chosen_seed) {
      row.className = 'chosen-seed';
    }
    const cells = COLUMNS.map((column) => {
      const value = report[column];
      return `<td style="background:${shade(value)}">${value.toFixed(3)}</td>`;
    });
    row.innerHTML = `<td>${seed}</td>` + cells.join('');
    table.appendChild(row);
  }

  for (const [seed, message] of Object.entries(split.failed_seeds)) {
    const row = document.createElement('tr');
    row.className = 'failed-seed';
    row.dataset.seed = seed;
    row.innerHTML = `<td>${seed}</td><td colspan="${COLUMNS.length}">failed: ${message}</td>`;
    table.appendChild(row);
  }

  return table;
}
