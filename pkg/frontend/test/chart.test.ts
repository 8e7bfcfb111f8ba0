import { describe, expect, it } from "vitest";

import { countCurves, curvePointCounts, renderChart, strengthColor } from "../src/chart.js";
import { appendHistory, initialState, selectStep } from "../src/state.js";

const T = 200;

function series(seedOffset: number): number[] {
  return Array.from({ length: T }, (_, i) => Math.sin(i / 10) + seedOffset);
}

describe("renderChart", () => {
  it("grid mode renders ten curves: the input plus nine strengths", () => {
    const edits = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9].map((w) => ({
      w,
      values: series(w),
    }));
    const svg = renderChart(series(0), edits);
    expect(countCurves(svg)).toBe(10);
  });

  it("keeps exactly one point per sample (no resampling)", () => {
    const svg = renderChart(series(0), [{ w: 0.9, values: series(1) }]);
    expect(curvePointCounts(svg)).toEqual([T, T]);
  });

  it("tags edit curves with their strength for the color ramp", () => {
    const svg = renderChart(series(0), [{ w: 0.4, values: series(1) }]);
    expect(svg).toContain('data-w="0.4"');
    expect(svg).toContain(strengthColor(0.4));
    expect(svg).toContain('data-role="input"');
  });

  it("strength colors differ across the ramp", () => {
    expect(strengthColor(0.1)).not.toBe(strengthColor(0.9));
  });

  it("handles a single-point degenerate series without NaN coordinates", () => {
    const svg = renderChart([1.0], []);
    expect(svg).not.toContain("NaN");
  });
});

describe("session state history", () => {
  const step = (i: number) => ({
    instruction: `step ${i}`,
    weights: [0.5],
    response: { edits: [{ w: 0.5, values: [i] }], zNorms: [1], reconstruction: null },
  });

  it("is append-only: earlier steps are preserved untouched", () => {
    let state = initialState();
    state = appendHistory(state, step(1));
    const after_first = state.history[0];
    state = appendHistory(state, step(2));
    expect(state.history).toHaveLength(2);
    expect(state.history[0]).toBe(after_first);
  });

  it("selectStep retrieves past results for branching exploration", () => {
    let state = initialState();
    state = appendHistory(state, step(1));
    state = appendHistory(state, step(2));
    expect(selectStep(state, 0).response.edits[0].values).toEqual([1]);
    expect(() => selectStep(state, 5)).toThrow();
  });
});
