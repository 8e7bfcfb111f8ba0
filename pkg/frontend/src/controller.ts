import { SequencedEditor } from "./api.js";
import { debounce } from "./debounce.js";
import type { EditResponse } from "./types.js";

export const SLIDER_DEBOUNCE_MS = 150;
export const GRID_WEIGHTS = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

export interface EditSource {
  series?: number[];
  seriesId?: string;
}

/**
 * Drives editing from UI events. Slider moves are debounced (150 ms) and a
 * request always includes w=0 so the reconstruction stays on screen; the
 * sequenced editor drops responses that were superseded mid-flight.
 */
export class EditController {
  private editor: SequencedEditor;

  constructor(
    editor: SequencedEditor,
    private onResult: (response: EditResponse) => void,
    private onError: (err: unknown) => void = () => undefined,
    debounceMs: number = SLIDER_DEBOUNCE_MS,
  ) {
    this.editor = editor;
    this.slide = debounce((source: EditSource, instruction: string, w: number) => {
      void this.issue(source, instruction, w === 0 ? [0] : [0, w]);
    }, debounceMs);
  }

  /** Debounced: call on every slider input event. */
  readonly slide: (source: EditSource, instruction: string, w: number) => void;

  /** Immediate: the grid sweep issues input + nine strengths at once. */
  grid(source: EditSource, instruction: string): Promise<void> {
    return this.issue(source, instruction, [0, ...GRID_WEIGHTS]);
  }

  private async issue(source: EditSource, instruction: string, weights: number[]): Promise<void> {
    try {
      const response = await this.editor.edit({ ...source, instruction, weights });
      if (response !== null) this.onResult(response);
    } catch (err) {
      this.onError(err);
    }
  }
}
