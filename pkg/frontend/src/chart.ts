import type { EditCurve } from "./types.js";

export interface ChartOptions {
  width?: number;
  height?: number;
  pad?: number;
}

/** Editing-strength color ramp: blue (w=0) through red (w=1). */
export function strengthColor(w: number): string {
  const hue = Math.round(210 - 180 * Math.min(1, Math.max(0, w)));
  return `hsl(${hue},80%,45%)`;
}

function polylinePoints(
  values: number[],
  x0: number,
  y0: number,
  width: number,
  height: number,
  vmin: number,
  vmax: number,
): string {
  const span = vmax - vmin || 1;
  const n = values.length;
  return values
    .map((v, i) => {
      const x = x0 + (width * i) / Math.max(1, n - 1);
      const y = y0 + height * (1 - (v - vmin) / span);
      return `${x.toFixed(2)},${y.toFixed(2)}`;
    })
    .join(" ");
}

/**
 * Renders the input series plus one curve per edit as an SVG string.
 * Every curve keeps exactly one point per sample: no client-side resampling.
 */
export function renderChart(
  input: number[],
  edits: EditCurve[],
  opts: ChartOptions = {},
): string {
  const width = opts.width ?? 720;
  const height = opts.height ?? 340;
  const pad = opts.pad ?? 12;
  const all = input.concat(...edits.map((e) => e.values));
  const vmin = Math.min(...all);
  const vmax = Math.max(...all);
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  const lines: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" width="${width}" height="${height}">`,
    `<rect width="${width}" height="${height}" fill="#ffffff"/>`,
  ];
  for (const edit of edits) {
    lines.push(
      `<polyline fill="none" stroke="${strengthColor(edit.w)}" stroke-width="1.5" ` +
        `data-role="edit" data-w="${edit.w}" points="${polylinePoints(
          edit.values, pad, pad, innerW, innerH, vmin, vmax)}"/>`,
    );
  }
  lines.push(
    `<polyline fill="none" stroke="#111111" stroke-width="1.8" data-role="input" ` +
      `points="${polylinePoints(input, pad, pad, innerW, innerH, vmin, vmax)}"/>`,
  );
  lines.push("</svg>");
  return lines.join("\n");
}

export function countCurves(svg: string): number {
  return (svg.match(/<polyline /g) ?? []).length;
}

export function curvePointCounts(svg: string): number[] {
  const counts: number[] = [];
  const re = /points="([^"]*)"/g;
  let match: RegExpExecArray | null;
  while ((match = re.exec(svg)) !== null) {
    counts.push(match[1].split(" ").filter((s) => s.length > 0).length);
  }
  return counts;
}
