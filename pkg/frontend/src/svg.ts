/** Small deterministic SVG helpers: fixed canvas, fixed number formatting. */

export const WIDTH = 640;
export const HEIGHT = 480;
export const MARGIN = { top: 40, right: 24, bottom: 48, left: 60 };

export const fmt = (v: number): string => {
  const s = v.toFixed(3);
  return s === "-0.000" ? "0.000" : s;
};

export interface Scale {
  (value: number): number;
  domain: [number, number];
}

export function linearScale(domain: [number, number], range: [number, number]): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 || 1;
  const scale = ((value: number) => r0 + ((value - d0) / span) * (r1 - r0)) as Scale;
  scale.domain = domain;
  return scale;
}

export function extent(values: number[], pad = 0.05): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!Number.isFinite(lo)) {
    return [0, 1];
  }
  if (lo === hi) {
    return [lo - 1, hi + 1];
  }
  const slack = (hi - lo) * pad;
  return [lo - slack, hi + slack];
}

export function ticks(domain: [number, number], count = 6): number[] {
  const [lo, hi] = domain;
  const rawStep = (hi - lo) / Math.max(count, 1);
  const magnitude = 10 ** Math.floor(Math.log10(Math.abs(rawStep) || 1));
  const candidates = [1, 2, 2.5, 5, 10].map((m) => m * magnitude);
  const step = candidates.find((c) => c >= rawStep) ?? candidates[candidates.length - 1];
  const start = Math.ceil(lo / step) * step;
  const out: number[] = [];
  for (let v = start; v <= hi + 1e-12; v += step) {
    out.push(Math.abs(v) < step / 1e6 ? 0 : v);
  }
  return out;
}

export function open(title?: string): string[] {
  const parts = [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}">`,
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`,
  ];
  if (title) {
    parts.push(
      `<text x="${WIDTH / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">${escapeText(title)}</text>`,
    );
  }
  return parts;
}

export function axes(
  x: Scale,
  y: Scale,
  xLabel?: string,
  yLabel?: string,
): string[] {
  const left = MARGIN.left;
  const right = WIDTH - MARGIN.right;
  const top = MARGIN.top;
  const bottom = HEIGHT - MARGIN.bottom;
  const parts = [
    `<line x1="${left}" y1="${bottom}" x2="${right}" y2="${bottom}" stroke="black"/>`,
    `<line x1="${left}" y1="${top}" x2="${left}" y2="${bottom}" stroke="black"/>`,
  ];
  for (const t of ticks(x.domain)) {
    const px = fmt(x(t));
    parts.push(`<line x1="${px}" y1="${bottom}" x2="${px}" y2="${bottom + 5}" stroke="black"/>`);
    parts.push(
      `<text x="${px}" y="${bottom + 20}" text-anchor="middle" font-family="sans-serif" font-size="11">${tickLabel(t)}</text>`,
    );
  }
  for (const t of ticks(y.domain)) {
    const py = fmt(y(t));
    parts.push(`<line x1="${left - 5}" y1="${py}" x2="${left}" y2="${py}" stroke="black"/>`);
    parts.push(
      `<text x="${left - 8}" y="${py}" text-anchor="end" dominant-baseline="middle" font-family="sans-serif" font-size="11">${tickLabel(t)}</text>`,
    );
  }
  if (xLabel) {
    parts.push(
      `<text x="${(left + right) / 2}" y="${HEIGHT - 10}" text-anchor="middle" font-family="sans-serif" font-size="13">${escapeText(xLabel)}</text>`,
    );
  }
  if (yLabel) {
    parts.push(
      `<text x="16" y="${(top + bottom) / 2}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 ${(top + bottom) / 2})">${escapeText(yLabel)}</text>`,
    );
  }
  return parts;
}

export function close(parts: string[]): string {
  return parts.concat("</svg>").join("\n") + "\n";
}

function tickLabel(v: number): string {
  const rounded = Math.round(v * 1e6) / 1e6;
  return String(rounded);
}

export function escapeText(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}
