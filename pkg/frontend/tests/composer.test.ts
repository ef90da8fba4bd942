import { describe, expect, it, vi } from 'vitest';
import { createComposer } from '../src/composer.js';

function grab(handle: ReturnType<typeof createComposer>) {
  return {
    input: handle.element.querySelector('.template-input') as HTMLInputElement,
    preview: handle.element.querySelector('.prompt-preview') as HTMLElement,
    error: handle.element.querySelector('.composer-error') as HTMLElement,
    button: handle.element.querySelector('.generate-button') as HTMLButtonElement,
    chips: () => handle.element.querySelectorAll('.chip'),
  };
}

describe('createComposer', () => {
  it('tracks added tokens as chips and grows the default template', () => {
    const composer = createComposer({ onGenerate: vi.fn() });
    const ui = grab(composer);

    composer.addToken('<a_v1>', 'a');
    expect(ui.input.value).toBe('A photo of {}');
    composer.addToken('<b_v2>', 'b');
    expect(ui.input.value).toBe('A photo of {} {}');
    expect(ui.chips()).toHaveLength(2);
    expect(ui.preview.textContent).toBe('A photo of <a_v1> <b_v2>');
  });

  it('removes a chip on click and shrinks the default template', () => {
    const composer = createComposer({ onGenerate: vi.fn() });
    const ui = grab(composer);
    composer.addToken('<a_v1>', 'a');
    composer.addToken('<a_v2>', 'a');

    (ui.chips()[0] as HTMLButtonElement).click();
    expect(composer.getSelection()).toEqual([{ token: '<a_v2>', treeId: 'a' }]);
    expect(ui.input.value).toBe('A photo of {}');
  });

  it('stops touching the template once the user edits it', () => {
    const composer = createComposer({ onGenerate: vi.fn() });
    const ui = grab(composer);
    composer.addToken('<a_v1>', 'a');

    ui.input.value = 'A chair in the shape of {a}';
    ui.input.dispatchEvent(new Event('input'));
    composer.addToken('<a_v2>', 'a');
    expect(ui.input.value).toBe('A chair in the shape of {a}');
  });

  it('blocks generation when slot count and token count disagree', () => {
    const onGenerate = vi.fn();
    const composer = createComposer({ onGenerate });
    const ui = grab(composer);
    composer.addToken('<a_v1>', 'a');
    composer.setTemplate('A photo of {} {}');

    ui.button.click();
    expect(onGenerate).not.toHaveBeenCalled();
    expect(ui.error.hidden).toBe(false);
    expect(ui.error.textContent).toBe('template has 2 slots but 1 token selected');
  });

  it('blocks generation on template syntax errors', () => {
    const onGenerate = vi.fn();
    const composer = createComposer({ onGenerate });
    const ui = grab(composer);
    composer.addToken('<a_v1>', 'a');
    composer.setTemplate('A photo of { oops');

    ui.button.click();
    expect(onGenerate).not.toHaveBeenCalled();
    expect(ui.error.textContent).toContain("unmatched '{'");
  });

  it('blocks generation with no tokens selected', () => {
    const onGenerate = vi.fn();
    const composer = createComposer({ onGenerate });
    const ui = grab(composer);

    expect(ui.error.hidden).toBe(true);
    ui.button.click();
    expect(onGenerate).not.toHaveBeenCalled();
    expect(ui.error.textContent).toBe('select at least one token');
  });

  it('submits tokens in selection order with the current template', () => {
    const onGenerate = vi.fn();
    const composer = createComposer({ onGenerate });
    const ui = grab(composer);
    composer.addToken('<b_v5>', 'b');
    composer.addToken('<a_v1>', 'a');

    ui.button.click();
    expect(onGenerate).toHaveBeenCalledWith(
      [
        { token: '<b_v5>', treeId: 'b' },
        { token: '<a_v1>', treeId: 'a' },
      ],
      'A photo of {} {}',
    );
    expect(ui.error.hidden).toBe(true);
  });

  it('clears the mismatch message after the template is fixed', () => {
    const composer = createComposer({ onGenerate: vi.fn() });
    const ui = grab(composer);
    composer.addToken('<a_v1>', 'a');
    composer.setTemplate('{} and {}');
    ui.button.click();
    expect(ui.error.hidden).toBe(false);

    composer.setTemplate('just {}');
    expect(ui.error.hidden).toBe(true);
    expect(ui.preview.textContent).toBe('just <a_v1>');
  });

  it('reports selection and template changes', () => {
    const onChange = vi.fn();
    const composer = createComposer({ onGenerate: vi.fn(), onChange });
    composer.addToken('<a_v1>', 'a');
    expect(onChange).toHaveBeenLastCalledWith(
      [{ token: '<a_v1>', treeId: 'a' }],
      'A photo of {}',
    );
  });

  it('disables the button while busy', () => {
    const composer = createComposer({ onGenerate: vi.fn() });
    const ui = grab(composer);
    composer.setBusy(true);
    expect(ui.button.disabled).toBe(true);
    expect(ui.button.textContent).toBe('Generating…');
    composer.setBusy(false);
    expect(ui.button.disabled).toBe(false);
  });
});
