import { writeFileSync, existsSync, mkdirSync } from "node:fs";
import { dirname } from "node:path";
import { z } from "zod";

import { numericColumn, readCsv, stringColumn, Table } from "./csv.js";
import { HEIGHT, MARGIN, WIDTH, axes, close, extent, fmt, linearScale, open } from "./svg.js";

export const plotSpecSchema = z.object({
  kind: z.enum(["histogram", "qq", "scatter2d", "graph"]),
  input: z.string(),
  output: z.string(),
  title: z.string().optional(),
  xLabel: z.string().optional(),
  yLabel: z.string().optional(),
  // histogram
  column: z.string().optional(),
  bins: z.number().int().positive().optional(),
  reference: z.number().optional(),
  coordinate: z.number().int().optional(),
  // scatter2d
  case: z.string().optional(),
  xColumn: z.string().optional(),
  yColumn: z.string().optional(),
  // graph
  term: z.number().int().optional(),
});

export type PlotSpec = z.infer<typeof plotSpecSchema>;

export function loadSpec(raw: unknown): PlotSpec {
  const spec = plotSpecSchema.parse(raw);
  if (!existsSync(spec.input)) {
    throw new Error(`input file does not exist: ${spec.input}`);
  }
  return spec;
}

export function render(spec: PlotSpec): string {
  const table = readCsv(spec.input);
  let svg: string;
  switch (spec.kind) {
    case "histogram":
      svg = renderHistogram(spec, table);
      break;
    case "qq":
      svg = renderQq(spec, table);
      break;
    case "scatter2d":
      svg = renderScatter(spec, table);
      break;
    case "graph":
      svg = renderGraph(spec, table);
      break;
  }
  mkdirSync(dirname(spec.output), { recursive: true });
  writeFileSync(spec.output, svg);
  return spec.output;
}

export function binCounts(values: number[], bins: number, lo: number, hi: number): number[] {
  const counts = new Array(bins).fill(0);
  const span = hi - lo || 1;
  for (const v of values) {
    let idx = Math.floor(((v - lo) / span) * bins);
    if (idx === bins) idx = bins - 1; // right edge belongs to the last bin
    if (idx >= 0 && idx < bins) counts[idx] += 1;
  }
  return counts;
}

function histogramRows(spec: PlotSpec, table: Table): { values: number[]; reference?: number } {
  const column = spec.column ?? "post";
  let values = numericColumn(table, column);
  let truths: number[] | null = table.columns.includes("truth")
    ? numericColumn(table, "truth")
    : null;
  if (spec.coordinate !== undefined) {
    const flats = numericColumn(table, "flat");
    const keep = flats.map((f) => f === spec.coordinate);
    values = values.filter((_, i) => keep[i]);
    if (truths) truths = truths.filter((_, i) => keep[i]);
    if (values.length === 0) {
      throw new Error(`no rows with flat == ${spec.coordinate}`);
    }
  }
  let reference = spec.reference;
  if (reference === undefined && truths && truths.length > 0) {
    const unique = new Set(truths.map((t) => t.toExponential(12)));
    if (unique.size === 1) reference = truths[0];
  }
  return { values, reference };
}

function renderHistogram(spec: PlotSpec, table: Table): string {
  const { values, reference } = histogramRows(spec, table);
  const bins = spec.bins ?? 25;
  const domainValues = reference === undefined ? values : values.concat([reference]);
  const [lo, hi] = extent(domainValues, 0.08);
  const counts = binCounts(values, bins, lo, hi);
  const x = linearScale([lo, hi], [MARGIN.left, WIDTH - MARGIN.right]);
  const y = linearScale([0, Math.max(...counts, 1)], [HEIGHT - MARGIN.bottom, MARGIN.top]);
  const parts = open(spec.title);
  const base = HEIGHT - MARGIN.bottom;
  counts.forEach((count, i) => {
    const x0 = lo + ((hi - lo) * i) / bins;
    const x1 = lo + ((hi - lo) * (i + 1)) / bins;
    const px = x(x0);
    const width = Math.max(x(x1) - px - 1, 0.5);
    const py = y(count);
    parts.push(
      `<rect x="${fmt(px)}" y="${fmt(py)}" width="${fmt(width)}" height="${fmt(base - py)}" fill="#7a9bbd" stroke="none"/>`,
    );
  });
  if (reference !== undefined) {
    const px = fmt(x(reference));
    parts.push(
      `<line data-role="reference-line" data-value="${reference}" x1="${px}" y1="${MARGIN.top}" x2="${px}" y2="${base}" stroke="#c22" stroke-width="2"/>`,
    );
  }
  parts.push(...axes(x, y, spec.xLabel ?? (spec.column ?? "post"), spec.yLabel ?? "count"));
  return close(parts);
}

function renderQq(spec: PlotSpec, table: Table): string {
  const theo = numericColumn(table, "theoretical");
  const emp = numericColumn(table, "empirical");
  const [lo, hi] = extent(theo.concat(emp), 0.05);
  const x = linearScale([lo, hi], [MARGIN.left, WIDTH - MARGIN.right]);
  const y = linearScale([lo, hi], [HEIGHT - MARGIN.bottom, MARGIN.top]);
  const parts = open(spec.title ?? "normal QQ");
  parts.push(
    `<line x1="${fmt(x(lo))}" y1="${fmt(y(lo))}" x2="${fmt(x(hi))}" y2="${fmt(y(hi))}" stroke="#999" stroke-dasharray="4 3"/>`,
  );
  theo.forEach((t, i) => {
    parts.push(`<circle cx="${fmt(x(t))}" cy="${fmt(y(emp[i]))}" r="2.5" fill="#33557a"/>`);
  });
  parts.push(
    ...axes(x, y, spec.xLabel ?? "theoretical quantile", spec.yLabel ?? "empirical quantile"),
  );
  return close(parts);
}

export function scatterPoints(spec: PlotSpec, table: Table): Array<[number, number]> {
  if (spec.xColumn && spec.yColumn) {
    const xs = numericColumn(table, spec.xColumn);
    const ys = numericColumn(table, spec.yColumn);
    return xs.map((v, i) => [v, ys[i]]);
  }
  // pivot of the long contrast table: one point per replication of the
  // chosen bivariate case
  const wanted = spec.case ?? "IV";
  const reps = stringColumn(table, "rep");
  const cases = stringColumn(table, "case");
  const components = numericColumn(table, "component");
  const values = numericColumn(table, "standardized");
  const byRep = new Map<string, { x?: number; y?: number }>();
  cases.forEach((c, i) => {
    if (c !== wanted) return;
    const entry = byRep.get(reps[i]) ?? {};
    if (components[i] === 1) entry.x = values[i];
    else if (components[i] === 2) entry.y = values[i];
    byRep.set(reps[i], entry);
  });
  const points: Array<[number, number]> = [];
  for (const entry of byRep.values()) {
    if (entry.x !== undefined && entry.y !== undefined) {
      points.push([entry.x, entry.y]);
    }
  }
  if (points.length === 0) {
    throw new Error(`no bivariate rows for case "${wanted}"`);
  }
  return points;
}

function renderScatter(spec: PlotSpec, table: Table): string {
  const points = scatterPoints(spec, table);
  const [xlo, xhi] = extent(points.map((p) => p[0]), 0.08);
  const [ylo, yhi] = extent(points.map((p) => p[1]), 0.08);
  const x = linearScale([xlo, xhi], [MARGIN.left, WIDTH - MARGIN.right]);
  const y = linearScale([ylo, yhi], [HEIGHT - MARGIN.bottom, MARGIN.top]);
  const parts = open(spec.title);
  if (xlo < 0 && xhi > 0) {
    const px = fmt(x(0));
    parts.push(`<line x1="${px}" y1="${MARGIN.top}" x2="${px}" y2="${HEIGHT - MARGIN.bottom}" stroke="#ddd"/>`);
  }
  if (ylo < 0 && yhi > 0) {
    const py = fmt(y(0));
    parts.push(`<line x1="${MARGIN.left}" y1="${py}" x2="${WIDTH - MARGIN.right}" y2="${py}" stroke="#ddd"/>`);
  }
  for (const [px, py] of points) {
    parts.push(`<circle cx="${fmt(x(px))}" cy="${fmt(y(py))}" r="3" fill="#33557a" fill-opacity="0.7"/>`);
  }
  parts.push(
    ...axes(x, y, spec.xLabel ?? "component 1", spec.yLabel ?? "component 2"),
  );
  return close(parts);
}

function renderGraph(spec: PlotSpec, table: Table): string {
  const terms = numericColumn(table, "term");
  const nodeA = numericColumn(table, "node_a");
  const nodeB = numericColumn(table, "node_b");
  const weights = numericColumn(table, "partial_correlation");
  const edges: Array<{ a: number; b: number; w: number }> = [];
  terms.forEach((t, i) => {
    if (spec.term !== undefined && t !== spec.term) return;
    edges.push({ a: nodeA[i], b: nodeB[i], w: weights[i] });
  });
  const nodes = [...new Set(edges.flatMap((e) => [e.a, e.b]))].sort((a, b) => a - b);
  if (nodes.length === 0) {
    throw new Error(spec.term === undefined ? "no edges to draw" : `no edges for term ${spec.term}`);
  }
  const cx = WIDTH / 2;
  const cy = (HEIGHT + MARGIN.top) / 2;
  const radius = Math.min(WIDTH, HEIGHT) / 2 - 70;
  const position = new Map<number, [number, number]>();
  nodes.forEach((node, i) => {
    const angle = (2 * Math.PI * i) / nodes.length - Math.PI / 2;
    position.set(node, [cx + radius * Math.cos(angle), cy + radius * Math.sin(angle)]);
  });
  const parts = open(spec.title ?? "partial-correlation graph");
  for (const edge of edges) {
    const [x1, y1] = position.get(edge.a)!;
    const [x2, y2] = position.get(edge.b)!;
    // positive partial correlations dashed red, negative solid black
    const style =
      edge.w > 0
        ? 'stroke="#c22" stroke-dasharray="6 4" data-sign="positive"'
        : 'stroke="black" data-sign="negative"';
    const width = fmt(1 + 3 * Math.min(Math.abs(edge.w), 1));
    parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" ${style} stroke-width="${width}"/>`,
    );
  }
  for (const node of nodes) {
    const [px, py] = position.get(node)!;
    parts.push(`<circle cx="${fmt(px)}" cy="${fmt(py)}" r="14" fill="#eef2f7" stroke="black"/>`);
    parts.push(
      `<text x="${fmt(px)}" y="${fmt(py)}" text-anchor="middle" dominant-baseline="central" font-family="sans-serif" font-size="12">${node}</text>`,
    );
  }
  return close(parts);
}
