import type { TemplatesResponse } from "./types.js";

/**
 * Canonical instruction composition: one template sentence per selected
 * attribute, joined by single spaces, in the schema's attribute order.
 * A non-empty free-text override replaces the composed text verbatim.
 */
export function composeInstruction(
  selections: Record<string, string>,
  templates: TemplatesResponse,
): string {
  const parts: string[] = [];
  for (const attr of templates.attributes) {
    const level = selections[attr.name];
    if (level === undefined || level === "") continue;
    const sentence = templates.templates[attr.name]?.[level];
    if (sentence === undefined) {
      throw new Error(`no template for ${attr.name}=${level}`);
    }
    parts.push(sentence);
  }
  return parts.join(" ");
}

export function effectiveInstruction(
  composed: string,
  freeTextOverride: string,
): string {
  const trimmed = freeTextOverride.trim();
  return trimmed.length > 0 ? freeTextOverride : composed;
}
