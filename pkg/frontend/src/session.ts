/**
 * UI session state machine.
 *
 * Holds everything the viewer needs between server round-trips: the slice
 * cursor, display window, active tool, overlay opacity, in-progress
 * guidance points, and the last /state snapshot. All mutators enforce the
 * session invariants (cursor within the volume, opacity in [0,1], window
 * hi > lo, a single in-flight guidance request), so the DOM layer can stay
 * a thin event adapter.
 */

import type { GuidanceBody, SessionInfo, SessionState } from "./api.js";
import { validationError, buildGeometry, type VolumePoint } from "./geometry.js";
import type { InteractionType } from "./rasterize.js";

export class UiSession {
  readonly sessionId: string;
  readonly depth: number;
  readonly height: number;
  readonly width: number;

  private _cursor = 0;
  private _window: [number, number] = [0.0, 1.0];
  private _tool: InteractionType = "scribble";
  private _opacity = 0.5;
  private _busy = false;

  thickness = 3;
  pending: VolumePoint[] = [];
  round = 0;
  qualityScores: number[] = [];
  suggestedSlice: number | null = null;
  annotatedSlices: number[] = [];

  constructor(info: SessionInfo) {
    this.sessionId = info.session_id;
    this.depth = info.c;
    this.height = info.h;
    this.width = info.w;
  }

  get cursor(): number {
    return this._cursor;
  }

  setCursor(k: number): void {
    this._cursor = Math.min(this.depth - 1, Math.max(0, Math.trunc(k)));
  }

  get window(): [number, number] {
    return this._window;
  }

  /** Returns false (and keeps the old window) when hi <= lo or not finite. */
  setWindow(lo: number, hi: number): boolean {
    if (!Number.isFinite(lo) || !Number.isFinite(hi) || hi <= lo) {
      return false;
    }
    this._window = [lo, hi];
    return true;
  }

  get tool(): InteractionType {
    return this._tool;
  }

  setTool(tool: InteractionType): void {
    if (tool !== this._tool) {
      this._tool = tool;
      this.pending = [];
    }
  }

  get opacity(): number {
    return this._opacity;
  }

  setOpacity(value: number): void {
    this._opacity = Math.min(1.0, Math.max(0.0, value));
  }

  get busy(): boolean {
    return this._busy;
  }

  addPoint(p: VolumePoint): void {
    this.pending.push(p);
  }

  /** Replace the most recent point; used while dragging a box corner. */
  updateLastPoint(p: VolumePoint): void {
    if (this.pending.length > 0) {
      this.pending[this.pending.length - 1] = p;
    }
  }

  clearPending(): void {
    this.pending = [];
  }

  /** Why the current stroke cannot be submitted, or null when it can. */
  submitBlocker(): string | null {
    if (this._busy) {
      return "a round is already processing";
    }
    return validationError(this._tool, this.pending);
  }

  /**
   * Claim the in-flight slot and build the request body. Returns null if
   * the stroke is invalid or another round is processing; no request
   * should be sent in that case.
   */
  beginSubmit(): GuidanceBody | null {
    if (this.submitBlocker() !== null) {
      return null;
    }
    const geometry = buildGeometry(this._tool, this.pending, this.thickness);
    this._busy = true;
    return {
      slice_index: this._cursor,
      type: this._tool,
      geometry: geometry as Record<string, unknown>,
    };
  }

  /** Apply a successful guidance response plus the refreshed /state. */
  completeSubmit(round: number, state: SessionState): void {
    this._busy = false;
    this.pending = [];
    this.round = round;
    this.applyState(state);
  }

  /** Release the in-flight slot after an error, keeping the stroke. */
  failSubmit(): void {
    this._busy = false;
  }

  applyState(state: SessionState): void {
    this.round = state.round;
    this.qualityScores = state.quality_scores;
    this.suggestedSlice = state.suggested_slice;
    this.annotatedSlices = state.annotated_slices;
  }

  /** The jump control is enabled only when a suggestion exists. */
  get canJump(): boolean {
    return this.suggestedSlice !== null;
  }

  /** Move the cursor to the suggested slice; false when exhausted. */
  jumpToSuggestion(): boolean {
    if (this.suggestedSlice === null) {
      return false;
    }
    this.setCursor(this.suggestedSlice);
    return true;
  }
}
