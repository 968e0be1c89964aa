/** Pure UI state machine.
 *
 * All volume mutations happen server-side; this module only tracks what
 * the view needs: which volume is in focus, which slice is shown, the
 * latest prediction, the pending manual override, and whether there are
 * unsaved server-side changes (dirty).
 */

import type { OrientCode, Prediction, UploadResult } from "./api.js";
import { isOrientCode } from "./api.js";

export interface UiVolumeState {
  volumeId: string | null;
  nSlices: number;
  sliceIndex: number;
  prediction: Prediction | null;
  pendingCode: OrientCode;
  dirty: boolean;
  busy: boolean;
  error: string | null;
}

export const initialState: UiVolumeState = {
  volumeId: null,
  nSlices: 0,
  sliceIndex: 0,
  prediction: null,
  pendingCode: "000",
  dirty: false,
  busy: false,
  error: null,
};

export type Action =
  | { kind: "upload-started" }
  | { kind: "upload-succeeded"; result: UploadResult }
  | { kind: "upload-failed"; message: string }
  | { kind: "prediction-received"; prediction: Prediction }
  | { kind: "slice-changed"; index: number }
  | { kind: "pending-code-changed"; code: string }
  | { kind: "adjust-started" }
  | { kind: "adjust-succeeded"; prediction: Prediction; applied: OrientCode }
  | { kind: "adjust-failed"; message: string }
  | { kind: "save-succeeded" }
  | { kind: "save-failed"; message: string }
  | { kind: "error-dismissed" };

function clampSlice(index: number, nSlices: number): number {
  if (nSlices <= 0) return 0;
  return Math.min(Math.max(Math.trunc(index), 0), nSlices - 1);
}

export function reduce(state: UiVolumeState, action: Action): UiVolumeState {
  switch (action.kind) {
    case "upload-started":
      return { ...state, busy: true, error: null };
    case "upload-succeeded":
      // A fresh upload replaces everything; nothing is dirty yet.
      return {
        ...initialState,
        volumeId: action.result.id,
        nSlices: action.result.nSlices,
      };
    case "upload-failed":
      return { ...state, busy: false, error: action.message };
    case "prediction-received":
      return {
        ...state,
        prediction: action.prediction,
        pendingCode: action.prediction.consensus,
      };
    case "slice-changed":
      return { ...state, sliceIndex: clampSlice(action.index, state.nSlices) };
    case "pending-code-changed":
      if (!isOrientCode(action.code)) return state;
      return { ...state, pendingCode: action.code };
    case "adjust-started":
      return { ...state, busy: true, error: null };
    case "adjust-succeeded":
      return {
        ...state,
        busy: false,
        prediction: action.prediction,
        pendingCode: action.prediction.consensus,
        // Applying 000 changes nothing server-side, so nothing to save.
        dirty: state.dirty || action.applied !== "000",
      };
    case "adjust-failed":
      return { ...state, busy: false, error: action.message };
    case "save-succeeded":
      return { ...state, dirty: false, error: null };
    case "save-failed":
      // Keep dirty: the server-side changes are still unsaved.
      return { ...state, error: action.message };
    case "error-dismissed":
      return { ...state, error: null };
  }
}

/** Derived view flags, kept out of the state to avoid drift. */
export function canAdjust(state: UiVolumeState): boolean {
  return state.volumeId !== null && state.prediction !== null && !state.busy;
}

export function canSave(state: UiVolumeState): boolean {
  return state.volumeId !== null && !state.busy;
}

export function standardizeCode(state: UiVolumeState): OrientCode | null {
  return state.prediction ? state.prediction.consensus : null;
}
