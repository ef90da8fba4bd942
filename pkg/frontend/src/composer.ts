import type { SelectedToken } from './session.js';
import { TemplateSyntaxError, defaultTemplate, fillTemplate, templateArity } from './template.js';

export interface ComposerCallbacks {
  onGenerate: (tokens: SelectedToken[], template: string) => void;
  onChange?: (selected: SelectedToken[], template: string) => void;
}

export interface ComposerHandle {
  element: HTMLElement;
  addToken(token: string, treeId: string): void;
  setSelection(selected: SelectedToken[]): void;
  setTemplate(template: string): void;
  getTemplate(): string;
  getSelection(): SelectedToken[];
  setBusy(busy: boolean): void;
  showError(message: string | null): void;
}

/**
 * Prompt composition panel: ordered token chips, an editable template whose
 * slots the chips fill positionally, a live preview of the exact prompt, and
 * a generate button. Submission is blocked client-side when the slot count
 * and chip count disagree or the template does not parse; the reason is shown
 * inline and the service is never called.
 */
export function createComposer(callbacks: ComposerCallbacks): ComposerHandle {
  let selected: SelectedToken[] = [];
  let busy = false;

  const element = document.createElement('section');
  element.className = 'composer';
  element.innerHTML = `
    <h2>Compose</h2>
    <div class="chip-row"></div>
    <label>Template
      <input class="template-input" type="text" spellcheck="false"
             placeholder="A photo of {} {}" />
    </label>
    <div class="prompt-preview"></div>
    <div class="composer-error" hidden></div>
    <button class="generate-button">Generate</button>
  `;

  const chipRow = element.querySelector('.chip-row') as HTMLElement;
  const templateInput = element.querySelector('.template-input') as HTMLInputElement;
  const preview = element.querySelector('.prompt-preview') as HTMLElement;
  const errorLine = element.querySelector('.composer-error') as HTMLElement;
  const generateBtn = element.querySelector('.generate-button') as HTMLButtonElement;

  const showError = (message: string | null) => {
    errorLine.hidden = message === null;
    errorLine.textContent = message ?? '';
  };

  // Returns the composed prompt when the current state is submittable,
  // otherwise shows why not and returns null. The zero-token nag is only
  // worth showing on an actual submit attempt, not while the panel is idle.
  const validate = (forSubmit = false): string | null => {
    const template = templateInput.value;
    if (selected.length === 0) {
      showError(forSubmit ? 'select at least one token' : null);
      return null;
    }
    let arity: number;
    try {
      arity = templateArity(template);
    } catch (err) {
      showError(err instanceof TemplateSyntaxError ? err.message : String(err));
      return null;
    }
    if (arity !== selected.length) {
      showError(
        `template has ${arity} slot${arity === 1 ? '' : 's'} ` +
          `but ${selected.length} token${selected.length === 1 ? '' : 's'} selected`,
      );
      return null;
    }
    showError(null);
    return fillTemplate(
      template,
      selected.map((entry) => entry.token),
    );
  };

  const refresh = () => {
    chipRow.innerHTML = '';
    selected.forEach((entry, index) => {
      const chip = document.createElement('button');
      chip.className = 'chip';
      chip.textContent = `${entry.token} ×`;
      chip.title = `from ${entry.treeId}; click to remove`;
      chip.onclick = () => {
        selected = selected.filter((_, i) => i !== index);
        if (templateInput.dataset.edited !== 'true') {
          templateInput.value = defaultTemplate(selected.length);
        }
        refresh();
      };
      chipRow.appendChild(chip);
    });

    const prompt = validate();
    preview.textContent = prompt === null ? '' : prompt;
    generateBtn.disabled = busy;
    callbacks.onChange?.(selected.slice(), templateInput.value);
  };

  templateInput.oninput = () => {
    templateInput.dataset.edited = 'true';
    refresh();
  };

  generateBtn.onclick = () => {
    const prompt = validate(true);
    if (prompt === null || busy) return;
    callbacks.onGenerate(selected.slice(), templateInput.value);
  };

  return {
    element,
    addToken(token, treeId) {
      selected.push({ token, treeId });
      if (templateInput.dataset.edited !== 'true') {
        templateInput.value = defaultTemplate(selected.length);
      }
      refresh();
    },
    setSelection(next) {
      selected = next.slice();
      if (templateInput.dataset.edited !== 'true') {
        templateInput.value = defaultTemplate(selected.length);
      }
      refresh();
    },
    setTemplate(template) {
      templateInput.value = template;
      if (template !== '') templateInput.dataset.edited = 'true';
      refresh();
    },
    getTemplate: () => templateInput.value,
    getSelection: () => selected.slice(),
    setBusy(next) {
      busy = next;
      generateBtn.disabled = next;
      generateBtn.textContent = next ? 'Generating…' : 'Generate';
    },
    showError,
  };
}
