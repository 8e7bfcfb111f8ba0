import type { EditResponse } from "./types.js";

export interface HistoryStep {
  instruction: string;
  weights: number[];
  response: EditResponse;
}

export interface SessionState {
  seriesValues: number[] | null;
  seriesId: string | null;
  instruction: string;
  history: HistoryStep[];
}

export function initialState(): SessionState {
  return { seriesValues: null, seriesId: null, instruction: "", history: [] };
}

/** History is append-only within a session; steps are never mutated. */
export function appendHistory(state: SessionState, step: HistoryStep): SessionState {
  return { ...state, history: [...state.history, step] };
}

export function selectStep(state: SessionState, index: number): HistoryStep {
  if (index < 0 || index >= state.history.length) {
    throw new Error(`history index ${index} out of range`);
  }
  return state.history[index];
}
