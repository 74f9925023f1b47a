/**
 * Controller tying the pure session model to the API client.
 *
 * Network traffic happens in exactly two places: opening an image (upload,
 * then one prefetch of the full score matrix) and switching models (one new
 * matrix). Reference clicks and threshold changes are reducer calls only.
 */

import { ForensicApi } from "./api.js";
import {
  SessionState,
  attachMatrix,
  initialState,
  loadImage,
  selectReference,
  setModel,
  setThreshold,
} from "./state.js";
import { OverlayCell, buildOverlay } from "./overlay.js";
import { Histogram, scoreHistogram } from "./histogram.js";
import { referenceScores } from "./state.js";

export class AnalystSession {
  state: SessionState = initialState();

  constructor(readonly api: ForensicApi) {}

  /** Upload and immediately prefetch the full matrix; exploration is local after this resolves. */
  async open(imageB64: string, modelId?: string): Promise<void> {
    const upload = await this.api.uploadImage(imageB64, modelId);
    this.state = loadImage(this.state, upload);
    const matrix = await this.api.scoreMatrix(upload.image_id, upload.model_id);
    this.state = attachMatrix(this.state, matrix);
  }

  async switchModel(modelId: string): Promise<void> {
    const imageId = this.state.imageId;
    this.state = setModel(this.state, modelId);
    if (imageId !== null && this.state.scores === null) {
      this.state = attachMatrix(this.state, await this.api.scoreMatrix(imageId, modelId));
    }
  }

  /** Pure: refuses unreliable blocks, re-renders from the cached matrix. */
  pickReference(row: number, col: number): void {
    this.state = selectReference(this.state, row, col);
  }

  /** Pure: never issues a scoring request. */
  setEta(eta: number): void {
    this.state = setThreshold(this.state, eta);
  }

  overlay(): OverlayCell[] {
    return buildOverlay(this.state);
  }

  histogram(binCount = 24): Histogram {
    return scoreHistogram(referenceScores(this.state), binCount);
  }
}
