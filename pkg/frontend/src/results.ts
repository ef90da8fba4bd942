import type { ResultPanel } from './session.js';

export interface ResultsCallbacks {
  /** Reuse a past panel's tokens and template as the next composition. */
  onReuse?: (panel: ResultPanel) => void;
  resolveUrl?: (url: string) => string;
}

export interface ResultsHandle {
  element: HTMLElement;
  append(panel: ResultPanel): void;
  panelCount(): number;
  clear(): void;
}

/** Column of result panels, newest first: prompt caption plus image grid. */
export function createResultsColumn(callbacks: ResultsCallbacks = {}): ResultsHandle {
  const element = document.createElement('section');
  element.className = 'results';
  element.innerHTML = '<h2>Results</h2><div class="panel-list"></div>';
  const list = element.querySelector('.panel-list') as HTMLElement;

  return {
    element,
    append(panel) {
      const item = document.createElement('article');
      item.className = 'result-panel';
      item.innerHTML = `
        <div class="result-prompt"></div>
        <div class="result-meta">seed ${panel.seed}, ${panel.images.length} images</div>
        <div class="result-grid"></div>
      `;
      (item.querySelector('.result-prompt') as HTMLElement).textContent = panel.prompt;

      const grid = item.querySelector('.result-grid') as HTMLElement;
      for (const image of panel.images) {
        if (image.url === null) continue;
        const img = document.createElement('img');
        img.className = 'thumb';
        img.src = callbacks.resolveUrl ? callbacks.resolveUrl(image.url) : image.url;
        img.alt = panel.prompt;
        grid.appendChild(img);
      }

      if (callbacks.onReuse !== undefined) {
        const reuse = document.createElement('button');
        reuse.className = 'reuse-button';
        reuse.textContent = 'Use as context';
        reuse.onclick = () => callbacks.onReuse!(panel);
        item.appendChild(reuse);
      }

      list.prepend(item);
    },
    panelCount: () => list.children.length,
    clear() {
      list.innerHTML = '';
    },
  };
}
