/**
 * Wire types for the similarity service, plus runtime decoders.
 *
 * Every response the client consumes passes through a decoder so that a
 * contract drift (renamed field, changed shape) fails loudly at the edge
 * instead of surfacing as NaN somewhere in the overlay math.
 */

export interface GridGeometry {
  rows: number;
  cols: number;
  block_size: number;
  overlap: number;
  stride: number;
}

export interface BlockInfo {
  index: number;
  row: number;
  col: number;
  origin: [number, number];
  entropy: number;
  reliable: boolean;
}

export interface ModelInfo {
  model_id: string;
  patch_size: number;
  scale_profile: string;
  feature_dim: number;
  phase: string;
  threshold: number;
  entropy_thresholds: [number, number];
  head_convention: { similar_index: number; different_index: number };
  default: boolean;
}

export interface UploadResponse {
  image_id: string;
  width: number;
  height: number;
  model_id: string;
  grid: GridGeometry;
  blocks: BlockInfo[];
}

/** Full block-pair matrix; scores[i][j] = similarity of block i vs block j (flat row-major indices). */
export interface ScoreMatrixResponse {
  image_id: string;
  model_id: string;
  grid: GridGeometry;
  reliable: boolean[];
  scores: number[][];
}

export interface LocalizeResponse {
  block_size: number;
  overlap: number;
  grid_dims: [number, number];
  reference: [number, number];
  eta: number;
  scores: number[][];
  reliable: boolean[][];
  flagged: boolean[][];
  image_id: string;
  model_id: string;
}

export interface CompareResponse {
  score: number;
  decision: "similar" | "different";
  decision_bit: 0 | 1;
  eta: number;
  model_id: string;
}

export interface ApiErrorBody {
  error: string;
  message: string;
}

// ---------------------------------------------------------------------------
// decoding helpers

class DecodeError extends TypeError {
  constructor(path: string, want: string, got: unknown) {
    super(`${path}: expected ${want}, got ${JSON.stringify(got)?.slice(0, 80) ?? typeof got}`);
    this.name = "DecodeError";
  }
}

function obj(v: unknown, path: string): Record<string, unknown> {
  if (typeof v !== "object" || v === null || Array.isArray(v)) throw new DecodeError(path, "object", v);
  return v as Record<string, unknown>;
}

function num(v: unknown, path: string): number {
  if (typeof v !== "number" || !Number.isFinite(v)) throw new DecodeError(path, "finite number", v);
  return v;
}

function int(v: unknown, path: string): number {
  const n = num(v, path);
  if (!Number.isInteger(n)) throw new DecodeError(path, "integer", v);
  return n;
}

function str(v: unknown, path: string): string {
  if (typeof v !== "string") throw new DecodeError(path, "string", v);
  return v;
}

function bool(v: unknown, path: string): boolean {
  if (typeof v !== "boolean") throw new DecodeError(path, "boolean", v);
  return v;
}

function arr(v: unknown, path: string): unknown[] {
  if (!Array.isArray(v)) throw new DecodeError(path, "array", v);
  return v;
}

function pair(v: unknown, path: string): [number, number] {
  const a = arr(v, path);
  if (a.length !== 2) throw new DecodeError(path, "length-2 array", v);
  return [num(a[0], `${path}[0]`), num(a[1], `${path}[1]`)];
}

function numGrid(v: unknown, path: string, rows: number, cols: number): number[][] {
  const outer = arr(v, path);
  if (outer.length !== rows) throw new DecodeError(path, `${rows} rows`, outer.length);
  return outer.map((row, r) => {
    const cells = arr(row, `${path}[${r}]`);
    if (cells.length !== cols) throw new DecodeError(`${path}[${r}]`, `${cols} columns`, cells.length);
    return cells.map((c, j) => num(c, `${path}[${r}][${j}]`));
  });
}

function boolGrid(v: unknown, path: string, rows: number, cols: number): boolean[][] {
  const outer = arr(v, path);
  if (outer.length !== rows) throw new DecodeError(path, `${rows} rows`, outer.length);
  return outer.map((row, r) => {
    const cells = arr(row, `${path}[${r}]`);
    if (cells.length !== cols) throw new DecodeError(`${path}[${r}]`, `${cols} columns`, cells.length);
    return cells.map((c, j) => bool(c, `${path}[${r}][${j}]`));
  });
}

// ---------------------------------------------------------------------------
// decoders

export function decodeGrid(v: unknown, path = "grid"): GridGeometry {
  const d = obj(v, path);
  const g = {
    rows: int(d.rows, `${path}.rows`),
    cols: int(d.cols, `${path}.cols`),
    block_size: int(d.block_size, `${path}.block_size`),
    overlap: num(d.overlap, `${path}.overlap`),
    stride: int(d.stride, `${path}.stride`),
  };
  if (g.rows < 1 || g.cols < 1 || g.stride < 1) throw new DecodeError(path, "positive grid dims", v);
  return g;
}

export function decodeModelInfo(v: unknown, path = "model"): ModelInfo {
  const d = obj(v, path);
  const head = obj(d.head_convention, `${path}.head_convention`);
  return {
    model_id: str(d.model_id, `${path}.model_id`),
    patch_size: int(d.patch_size, `${path}.patch_size`),
    scale_profile: str(d.scale_profile, `${path}.scale_profile`),
    feature_dim: int(d.feature_dim, `${path}.feature_dim`),
    phase: str(d.phase, `${path}.phase`),
    threshold: num(d.threshold, `${path}.threshold`),
    entropy_thresholds: pair(d.entropy_thresholds, `${path}.entropy_thresholds`),
    head_convention: {
      similar_index: int(head.similar_index, `${path}.head_convention.similar_index`),
      different_index: int(head.different_index, `${path}.head_convention.different_index`),
    },
    default: bool(d.default, `${path}.default`),
  };
}

export function decodeModelList(v: unknown): ModelInfo[] {
  const d = obj(v, "models response");
  return arr(d.models, "models").map((m, i) => decodeModelInfo(m, `models[${i}]`));
}

export function decodeUpload(v: unknown): UploadResponse {
  const d = obj(v, "upload response");
  const grid = decodeGrid(d.grid);
  const blocks = arr(d.blocks, "blocks").map((b, i) => {
    const e = obj(b, `blocks[${i}]`);
    return {
      index: int(e.index, `blocks[${i}].index`),
      row: int(e.row, `blocks[${i}].row`),
      col: int(e.col, `blocks[${i}].col`),
      origin: pair(e.origin, `blocks[${i}].origin`),
      entropy: num(e.entropy, `blocks[${i}].entropy`),
      reliable: bool(e.reliable, `blocks[${i}].reliable`),
    };
  });
  if (blocks.length !== grid.rows * grid.cols)
    throw new DecodeError("blocks", `${grid.rows * grid.cols} entries`, blocks.length);
  return {
    image_id: str(d.image_id, "image_id"),
    width: int(d.width, "width"),
    height: int(d.height, "height"),
    model_id: str(d.model_id, "model_id"),
    grid,
    blocks,
  };
}

export function decodeScoreMatrix(v: unknown): ScoreMatrixResponse {
  const d = obj(v, "score-matrix response");
  const grid = decodeGrid(d.grid);
  const n = grid.rows * grid.cols;
  const scores = numGrid(d.scores, "scores", n, n);
  for (const row of scores)
    for (const s of row)
      if (s < 0 || s > 1) throw new DecodeError("scores", "values in [0,1]", s);
  const reliable = arr(d.reliable, "reliable").map((b, i) => bool(b, `reliable[${i}]`));
  if (reliable.length !== n) throw new DecodeError("reliable", `${n} entries`, reliable.length);
  return {
    image_id: str(d.image_id, "image_id"),
    model_id: str(d.model_id, "model_id"),
    grid,
    reliable,
    scores,
  };
}

export function decodeLocalize(v: unknown): LocalizeResponse {
  const d = obj(v, "localize response");
  const dims = pair(d.grid_dims, "grid_dims");
  const [rows, cols] = [int(dims[0], "grid_dims[0]"), int(dims[1], "grid_dims[1]")];
  return {
    block_size: int(d.block_size, "block_size"),
    overlap: num(d.overlap, "overlap"),
    grid_dims: [rows, cols],
    reference: pair(d.reference, "reference"),
    eta: num(d.eta, "eta"),
    scores: numGrid(d.scores, "scores", rows, cols),
    reliable: boolGrid(d.reliable, "reliable", rows, cols),
    flagged: boolGrid(d.flagged, "flagged", rows, cols),
    image_id: str(d.image_id, "image_id"),
    model_id: str(d.model_id, "model_id"),
  };
}

export function decodeCompare(v: unknown): CompareResponse {
  const d = obj(v, "compare response");
  const decision = str(d.decision, "decision");
  if (decision !== "similar" && decision !== "different")
    throw new DecodeError("decision", '"similar" | "different"', decision);
  const bit = int(d.decision_bit, "decision_bit");
  if (bit !== 0 && bit !== 1) throw new DecodeError("decision_bit", "0 | 1", bit);
  const score = num(d.score, "score");
  if (score < 0 || score > 1) throw new DecodeError("score", "value in [0,1]", score);
  return {
    score,
    decision,
    decision_bit: bit as 0 | 1,
    eta: num(d.eta, "eta"),
    model_id: str(d.model_id, "model_id"),
  };
}

export function decodeErrorBody(v: unknown): ApiErrorBody {
  const d = obj(v, "error body");
  return { error: str(d.error, "error"), message: str(d.message, "message") };
}
