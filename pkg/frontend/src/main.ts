import { ApiClient, SequencedEditor } from "./api.js";
import { renderChart } from "./chart.js";
import { EditController, GRID_WEIGHTS } from "./controller.js";
import { composeInstruction, effectiveInstruction } from "./instruction.js";
import { appendHistory, initialState, selectStep, SessionState } from "./state.js";
import type { EditResponse, TemplatesResponse } from "./types.js";

const client = new ApiClient("");
const editor = new SequencedEditor(client);

let state: SessionState = initialState();
let templates: TemplatesResponse | null = null;
const selections: Record<string, string> = {};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const status = el<HTMLDivElement>("status");
  status.textContent = text;
  status.className = isError ? "status error" : "status";
}

function currentInstruction(): string {
  const composed = templates ? composeInstruction(selections, templates) : "";
  return effectiveInstruction(composed, el<HTMLTextAreaElement>("free-text").value);
}

function redraw(response: EditResponse): void {
  if (!state.seriesValues) return;
  const chart = el<HTMLDivElement>("chart");
  chart.innerHTML = renderChart(state.seriesValues, response.edits);
  state = appendHistory(state, {
    instruction: currentInstruction(),
    weights: response.edits.map((e) => e.w),
    response,
  });
  renderHistory();
}

function renderHistory(): void {
  const list = el<HTMLUListElement>("history");
  list.innerHTML = "";
  state.history.forEach((step, i) => {
    const item = document.createElement("li");
    const link = document.createElement("a");
    link.href = "#";
    link.textContent = `#${i + 1} w=[${step.weights.join(", ")}] ${step.instruction.slice(0, 60)}`;
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      const chosen = selectStep(state, i);
      if (state.seriesValues) {
        el<HTMLDivElement>("chart").innerHTML = renderChart(state.seriesValues, chosen.response.edits);
      }
    });
    item.appendChild(link);
    list.appendChild(item);
  });
}

const controller = new EditController(
  editor,
  redraw,
  (err) => setStatus(err instanceof Error ? err.message : String(err), true),
);

function editSource(): { series?: number[]; seriesId?: string } {
  return state.seriesId ? { seriesId: state.seriesId } : { series: state.seriesValues ?? [] };
}

function runSlider(): void {
  if (!state.seriesValues) {
    setStatus("load or sample a series first", true);
    return;
  }
  const instruction = currentInstruction();
  if (!instruction) {
    setStatus("compose or type an instruction first", true);
    return;
  }
  const w = Number(el<HTMLInputElement>("strength").value);
  el<HTMLSpanElement>("strength-value").textContent = w.toFixed(2);
  setStatus(`editing at w=${w.toFixed(2)}`);
  controller.slide(editSource(), instruction, w);
}

async function runGrid(): Promise<void> {
  if (!state.seriesValues) {
    setStatus("load or sample a series first", true);
    return;
  }
  const instruction = currentInstruction();
  if (!instruction) {
    setStatus("compose or type an instruction first", true);
    return;
  }
  setStatus(`sweeping w=0.1..0.9 (${GRID_WEIGHTS.length} strengths)`);
  await controller.grid(editSource(), instruction);
}

function buildComposer(t: TemplatesResponse): void {
  const host = el<HTMLDivElement>("composer");
  host.innerHTML = "";
  for (const attr of t.attributes) {
    const label = document.createElement("label");
    label.textContent = attr.name + " ";
    const select = document.createElement("select");
    const blank = document.createElement("option");
    blank.value = "";
    blank.textContent = "(keep)";
    select.appendChild(blank);
    for (const level of attr.levels) {
      const option = document.createElement("option");
      option.value = level;
      option.textContent = level;
      select.appendChild(option);
    }
    select.addEventListener("change", () => {
      if (select.value) selections[attr.name] = select.value;
      else delete selections[attr.name];
      el<HTMLDivElement>("composed").textContent = composeInstruction(selections, t);
      updateSendEnabled();
    });
    label.appendChild(select);
    host.appendChild(label);
  }
}

function updateSendEnabled(): void {
  const enabled = Boolean(currentInstruction()) && Boolean(state.seriesValues);
  el<HTMLButtonElement>("grid-btn").disabled = !enabled;
  el<HTMLInputElement>("strength").disabled = !enabled;
}

async function sampleSeries(): Promise<void> {
  try {
    const sample = await client.sample();
    state = { ...initialState(), seriesValues: sample.values, seriesId: sample.id };
    el<HTMLDivElement>("series-info").textContent =
      `${sample.id}  ${JSON.stringify(sample.attributes)}`;
    el<HTMLDivElement>("chart").innerHTML = renderChart(sample.values, []);
    setStatus("sampled a test series");
    renderHistory();
    updateSendEnabled();
  } catch (err) {
    setStatus(err instanceof Error ? err.message : String(err), true);
  }
}

function pasteSeries(): void {
  try {
    const values = JSON.parse(el<HTMLTextAreaElement>("paste-box").value) as number[];
    if (!Array.isArray(values) || values.some((v) => typeof v !== "number")) {
      throw new Error("paste a JSON array of numbers");
    }
    state = { ...initialState(), seriesValues: values, seriesId: null };
    el<HTMLDivElement>("series-info").textContent = `pasted series (length ${values.length})`;
    el<HTMLDivElement>("chart").innerHTML = renderChart(values, []);
    setStatus("loaded pasted series");
    renderHistory();
    updateSendEnabled();
  } catch (err) {
    setStatus(err instanceof Error ? err.message : String(err), true);
  }
}

async function boot(): Promise<void> {
  el<HTMLButtonElement>("sample-btn").addEventListener("click", () => void sampleSeries());
  el<HTMLButtonElement>("paste-btn").addEventListener("click", pasteSeries);
  el<HTMLButtonElement>("grid-btn").addEventListener("click", () => void runGrid());
  el<HTMLInputElement>("strength").addEventListener("input", runSlider);
  el<HTMLTextAreaElement>("free-text").addEventListener("input", updateSendEnabled);
  try {
    templates = await client.templates();
    buildComposer(templates);
    setStatus("ready");
  } catch (err) {
    setStatus(`templates unavailable: ${err instanceof Error ? err.message : err}`, true);
  }
  updateSendEnabled();
}

void boot();
