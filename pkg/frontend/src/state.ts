/**
 * Pure session model for the analyst workflow.
 *
 * All exploration state lives in one immutable SessionState. Reducers return
 * new states; nothing here touches the network. The overlay and histogram are
 * derived views, so any (matrix, reference, eta, model) combination renders
 * the same way no matter how the analyst arrived at it, and a recorded
 * history can be replayed to identical results.
 */

import { BlockInfo, GridGeometry, ScoreMatrixResponse, UploadResponse } from "./types.js";

export interface ExplorationStep {
  reference: [number, number] | null;
  eta: number;
}

export interface SessionState {
  imageId: string | null;
  modelId: string | null;
  grid: GridGeometry | null;
  blocks: BlockInfo[];
  /** Flat-indexed block-pair matrix, prefetched once per (image, model). */
  scores: number[][] | null;
  reliable: boolean[];
  reference: [number, number] | null;
  eta: number;
  history: ExplorationStep[];
}

export const DEFAULT_ETA = 0.5;

export class UnreliableReferenceError extends Error {
  constructor(row: number, col: number) {
    super(`block (${row}, ${col}) fails the entropy filter and cannot anchor a comparison`);
    this.name = "UnreliableReferenceError";
  }
}

export function initialState(eta: number = DEFAULT_ETA): SessionState {
  checkEta(eta);
  return {
    imageId: null,
    modelId: null,
    grid: null,
    blocks: [],
    scores: null,
    reliable: [],
    reference: null,
    eta,
    history: [],
  };
}

function checkEta(eta: number): void {
  if (!Number.isFinite(eta) || eta < 0 || eta > 1) {
    throw new RangeError(`eta must lie in [0, 1], got ${eta}`);
  }
}

/** New image: geometry arrives with the upload, matrix and exploration reset. */
export function loadImage(state: SessionState, upload: UploadResponse): SessionState {
  return {
    ...state,
    imageId: upload.image_id,
    modelId: upload.model_id,
    grid: upload.grid,
    blocks: upload.blocks,
    scores: null,
    reliable: upload.blocks.map((b) => b.reliable),
    reference: null,
    history: [],
  };
}

export function attachMatrix(state: SessionState, matrix: ScoreMatrixResponse): SessionState {
  if (state.imageId !== null && matrix.image_id !== state.imageId) {
    throw new Error(`matrix for image ${matrix.image_id} does not match session image ${state.imageId}`);
  }
  return {
    ...state,
    imageId: matrix.image_id,
    modelId: matrix.model_id,
    grid: matrix.grid,
    scores: matrix.scores,
    reliable: matrix.reliable,
  };
}

/** Switching models invalidates every score; geometry returns with the next matrix. */
export function setModel(state: SessionState, modelId: string): SessionState {
  if (modelId === state.modelId) return state;
  return {
    ...state,
    modelId,
    scores: null,
    reference: null,
    history: [],
  };
}

export function selectReference(state: SessionState, row: number, col: number): SessionState {
  const grid = state.grid;
  if (!grid) throw new Error("no image loaded");
  if (!Number.isInteger(row) || !Number.isInteger(col) || row < 0 || col < 0 || row >= grid.rows || col >= grid.cols) {
    throw new RangeError(`block (${row}, ${col}) outside the ${grid.rows}x${grid.cols} grid`);
  }
  if (!state.reliable[row * grid.cols + col]) {
    throw new UnreliableReferenceError(row, col);
  }
  const reference: [number, number] = [row, col];
  return {
    ...state,
    reference,
    history: [...state.history, { reference, eta: state.eta }],
  };
}

export function setThreshold(state: SessionState, eta: number): SessionState {
  checkEta(eta);
  return {
    ...state,
    eta,
    history: [...state.history, { reference: state.reference, eta }],
  };
}

/** Re-applies a recorded exploration on top of a loaded matrix. */
export function replayHistory(base: SessionState, steps: ExplorationStep[]): SessionState {
  let state: SessionState = { ...base, reference: null, eta: base.eta, history: [] };
  for (const step of steps) {
    state = setThreshold(state, step.eta);
    if (step.reference) {
      state = selectReference(state, step.reference[0], step.reference[1]);
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// derived views

export function referenceFlat(state: SessionState): number | null {
  if (!state.reference || !state.grid) return null;
  return state.reference[0] * state.grid.cols + state.reference[1];
}

/**
 * Flat boolean mask of blocks judged dissimilar to the reference.
 *
 * The rule is exactly score <= eta with the reference excluded; entropy
 * status is displayed but never alters membership, matching the service's
 * localization maps so client and server threshold identically.
 */
export function flaggedMask(state: SessionState): boolean[] {
  const ref = referenceFlat(state);
  if (ref === null || !state.scores) return [];
  const row = state.scores[ref];
  return row.map((score, j) => j !== ref && score <= state.eta);
}

/** Scores of every non-reference block against the current reference. */
export function referenceScores(state: SessionState): number[] {
  const ref = referenceFlat(state);
  if (ref === null || !state.scores) return [];
  return state.scores[ref].filter((_, j) => j !== ref);
}
