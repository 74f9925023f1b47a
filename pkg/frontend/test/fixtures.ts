/** Shared access to the recorded service fixtures. */

import { readFileSync } from "node:fs";

export function fixture(name: string): unknown {
  const url = new URL(`./fixtures/${name}`, import.meta.url);
  return JSON.parse(readFileSync(url, "utf8"));
}

export interface FixtureMeta {
  model_id: string;
  image_file: string;
  eta: number;
  insert_px: [number, number, number, number];
  inside_cells: [number, number][];
  outside_cells: [number, number][];
  host_ref: [number, number];
  donor_ref: [number, number];
  unreliable_block: [number, number];
}

export const meta = fixture("meta.json") as FixtureMeta;
