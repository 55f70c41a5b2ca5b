import { readFileSync } from "node:fs";

export interface Table {
  columns: string[];
  rows: string[][];
}

/** Read a headered comma-separated file (no quoting in these outputs). */
export function readCsv(path: string): Table {
  const text = readFileSync(path, "utf8");
  const lines = text.split("\n").map((l) => l.trim()).filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new Error(`${path} is empty`);
  }
  const columns = lines[0].split(",");
  const rows = lines.slice(1).map((line, i) => {
    const cells = line.split(",");
    if (cells.length !== columns.length) {
      throw new Error(`${path}: row ${i + 2} has ${cells.length} cells, expected ${columns.length}`);
    }
    return cells;
  });
  return { columns, rows };
}

export function columnIndex(table: Table, name: string): number {
  const idx = table.columns.indexOf(name);
  if (idx < 0) {
    throw new Error(`missing column "${name}" (have: ${table.columns.join(", ")})`);
  }
  return idx;
}

export function numericColumn(table: Table, name: string): number[] {
  const idx = columnIndex(table, name);
  return table.rows.map((row, i) => {
    const value = Number(row[idx]);
    if (!Number.isFinite(value)) {
      throw new Error(`non-numeric value "${row[idx]}" in column "${name}", row ${i + 2}`);
    }
    return value;
  });
}

export function stringColumn(table: Table, name: string): string[] {
  const idx = columnIndex(table, name);
  return table.rows.map((row) => row[idx]);
}
