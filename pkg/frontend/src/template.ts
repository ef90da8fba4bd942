// Prompt template handling. Slots are brace groups: "{}", "{a}", "{left}".
// Doubled braces are literals. Slot names are documentation only; tokens fill
// slots positionally, matching the service's composition rule exactly, so the
// prompt previewed here is the prompt the backend sees.

export class TemplateSyntaxError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'TemplateSyntaxError';
  }
}

/** Slot names in order of appearance ('' for anonymous slots). */
export function templateSlots(template: string): string[] {
  const slots: string[] = [];
  let i = 0;
  while (i < template.length) {
    const ch = template[i];
    if (ch === '{') {
      if (template[i + 1] === '{') {
        i += 2;
        continue;
      }
      const end = template.indexOf('}', i + 1);
      if (end === -1) throw new TemplateSyntaxError("unmatched '{' in template");
      slots.push(template.slice(i + 1, end));
      i = end + 1;
    } else if (ch === '}') {
      if (template[i + 1] === '}') {
        i += 2;
        continue;
      }
      throw new TemplateSyntaxError("unmatched '}' in template");
    } else {
      i += 1;
    }
  }
  return slots;
}

export function templateArity(template: string): number {
  return templateSlots(template).length;
}

/**
 * Fill slots with tokens, left to right. Token count must equal slot count;
 * the caller is expected to have blocked mismatches already, so this throws.
 * Replacement is by first occurrence of the literal slot text and doubled
 * braces stay doubled, byte-for-byte what the service composes.
 */
export function fillTemplate(template: string, tokens: string[]): string {
  const slots = templateSlots(template);
  if (slots.length !== tokens.length) {
    throw new TemplateSyntaxError(
      `template has ${slots.length} slots but ${tokens.length} tokens were given`,
    );
  }
  let out = template;
  slots.forEach((slot, index) => {
    out = out.replace('{' + slot + '}', tokens[index]!);
  });
  return out;
}

/** Default template with one anonymous slot per token, as the service uses. */
export function defaultTemplate(tokenCount: number): string {
  return 'A photo of ' + Array.from({ length: tokenCount }, () => '{}').join(' ');
}
