/** Workbench page controller: binds uploaded objects into a session, turns
 * canvas drags / sliders / pickers into query text, dispatches, and renders
 * returned maps as overlays. All math happens on the server. */

import { ApiError, WorkbenchApi } from "./api.js";
import { mapToGrid, paintInput, paintOverlay, resultGrids } from "./heatmap.js";
import { composeQuery, emptyComposer, isComposed, type ComposerState } from "./query.js";
import type { BackendOverrides, Rect, ResultPayload, TensorPayload } from "./types.js";

interface BoundInput {
  name: string;
  ref: string;
  tensor: TensorPayload;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class App {
  private api: WorkbenchApi;
  private sessionId: string | null = null;
  private composer: ComposerState = emptyComposer();
  private inputs = new Map<string, BoundInput>();
  private models = new Map<string, string>(); // name -> ref
  private pending = false;
  private dragStart: { r: number; c: number } | null = null;
  private derivedCounter = 0;

  private queryBox = el<HTMLTextAreaElement>("query-text");
  private statusLine = el<HTMLElement>("status");
  private historyList = el<HTMLUListElement>("history");
  private inputCanvas = el<HTMLCanvasElement>("input-canvas");
  private leftCanvas = el<HTMLCanvasElement>("map-left");
  private rightCanvas = el<HTMLCanvasElement>("map-right");
  private dispatchBtn = el<HTMLButtonElement>("dispatch");

  constructor(baseUrl: string) {
    this.api = new WorkbenchApi(baseUrl);
    this.wire();
  }

  private wire(): void {
    el<HTMLButtonElement>("connect").onclick = () => void this.connect();
    el<HTMLButtonElement>("bind-model").onclick = () => void this.bindModelFromBox();
    el<HTMLButtonElement>("bind-input").onclick = () => void this.bindInputFromBox();
    this.dispatchBtn.onclick = () => void this.dispatch();
    el<HTMLButtonElement>("clear-rect").onclick = () => {
      this.composer.rect = null;
      this.refreshComposer();
    };
    el<HTMLInputElement>("layer-slider").oninput = (ev) => {
      const v = Number((ev.target as HTMLInputElement).value);
      this.composer.layer = v === 0 ? null : v;
      el<HTMLElement>("layer-value").textContent = v === 0 ? "*" : String(v);
      this.refreshComposer();
    };
    el<HTMLSelectElement>("compare-mode").onchange = (ev) => {
      this.composer.comparison = (ev.target as HTMLSelectElement).value as ComposerState["comparison"];
      this.refreshComposer();
    };
    el<HTMLSelectElement>("second-input").onchange = (ev) => {
      const v = (ev.target as HTMLSelectElement).value;
      this.composer.secondInput = v || null;
      this.refreshComposer();
    };
    el<HTMLSelectElement>("second-model").onchange = (ev) => {
      const v = (ev.target as HTMLSelectElement).value;
      this.composer.secondModel = v || null;
      this.refreshComposer();
    };
    el<HTMLButtonElement>("whatif-nullify").onclick = () => void this.whatifNullify();
    el<HTMLButtonElement>("whatif-rotate").onclick = () => void this.whatifRotate();
    this.inputCanvas.onmousedown = (ev) => this.beginDrag(ev);
    this.inputCanvas.onmouseup = (ev) => this.endDrag(ev);
  }

  private status(text: string, isError = false): void {
    this.statusLine.textContent = text;
    this.statusLine.className = isError ? "error" : "";
  }

  private async connect(): Promise<void> {
    try {
      const { id } = await this.api.openSession();
      this.sessionId = id;
      this.status(`session ${id.slice(0, 8)} open`);
    } catch (err) {
      this.status(`cannot reach service: ${String(err)}`, true);
    }
  }

  private async bindModelFromBox(): Promise<void> {
    if (!this.sessionId) return this.status("connect first", true);
    const name = el<HTMLInputElement>("model-name").value.trim() || "f";
    try {
      const payload = JSON.parse(el<HTMLTextAreaElement>("model-json").value);
      const { ref } = await this.api.postModel(payload);
      await this.api.bindModel(this.sessionId, name, ref);
      this.models.set(name, ref);
      if (!this.composer.model) this.composer.model = name;
      this.refreshPickers();
      this.refreshComposer();
      this.status(`model ${name} -> ${ref.slice(0, 10)}`);
    } catch (err) {
      this.status(`model bind failed: ${String(err)}`, true);
    }
  }

  private async bindInputFromBox(): Promise<void> {
    if (!this.sessionId) return this.status("connect first", true);
    const name = el<HTMLInputElement>("input-name").value.trim() || "x";
    try {
      const tensor = JSON.parse(el<HTMLTextAreaElement>("input-json").value) as TensorPayload;
      const { ref } = await this.api.postInput(tensor);
      await this.api.bindInput(this.sessionId, name, ref);
      this.inputs.set(name, { name, ref, tensor });
      if (!this.composer.input) this.composer.input = name;
      this.drawInput();
      this.refreshPickers();
      this.refreshComposer();
      this.status(`input ${name} -> ${ref.slice(0, 10)}`);
    } catch (err) {
      this.status(`input bind failed: ${String(err)}`, true);
    }
  }

  private activeInput(): BoundInput | null {
    return this.composer.input ? this.inputs.get(this.composer.input) ?? null : null;
  }

  private gridShape(): { h: number; w: number } | null {
    const bound = this.activeInput();
    if (!bound) return null;
    const s = bound.tensor.shape;
    if (s.length === 2) return { h: s[0], w: s[1] };
    if (s.length === 3) return { h: s[1], w: s[2] };
    return null;
  }

  private beginDrag(ev: MouseEvent): void {
    const cell = this.cellAt(ev);
    if (cell) this.dragStart = cell;
  }

  private endDrag(ev: MouseEvent): void {
    const cell = this.cellAt(ev);
    if (!cell || !this.dragStart) return;
    const rect: Rect = {
      r0: Math.min(this.dragStart.r, cell.r),
      c0: Math.min(this.dragStart.c, cell.c),
      r1: Math.max(this.dragStart.r, cell.r),
      c1: Math.max(this.dragStart.c, cell.c),
    };
    this.dragStart = null;
    this.composer.rect = rect;
    this.refreshComposer();
    this.drawInput();
  }

  private cellAt(ev: MouseEvent): { r: number; c: number } | null {
    const grid = this.gridShape();
    if (!grid) return null;
    const bounds = this.inputCanvas.getBoundingClientRect();
    const c = Math.floor(((ev.clientX - bounds.left) / bounds.width) * grid.w);
    const r = Math.floor(((ev.clientY - bounds.top) / bounds.height) * grid.h);
    if (r < 0 || c < 0 || r >= grid.h || c >= grid.w) return null;
    return { r, c };
  }

  private backendOverrides(): BackendOverrides {
    return {
      backend: el<HTMLSelectElement>("backend").value as BackendOverrides["backend"],
      samples: Number(el<HTMLInputElement>("samples").value) || 2000,
      seed: Number(el<HTMLInputElement>("seed").value) || 0,
      epsilon: Number(el<HTMLInputElement>("epsilon").value),
    };
  }

  private refreshComposer(): void {
    const composed = composeQuery(this.composer);
    if (isComposed(composed)) {
      this.queryBox.value = composed.query;
      this.dispatchBtn.disabled = false;
      this.dispatchBtn.title = "";
    } else {
      this.dispatchBtn.disabled = true;
      this.dispatchBtn.title = composed.reason;
      this.status(composed.reason);
    }
  }

  private refreshPickers(): void {
    const inputSel = el<HTMLSelectElement>("second-input");
    inputSel.innerHTML = '<option value="">(none)</option>';
    for (const name of this.inputs.keys()) {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = name;
      inputSel.appendChild(opt);
    }
    const modelSel = el<HTMLSelectElement>("second-model");
    modelSel.innerHTML = '<option value="">(same model)</option>';
    for (const name of this.models.keys()) {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = name;
      modelSel.appendChild(opt);
    }
  }

  private async dispatch(): Promise<void> {
    if (!this.sessionId) return this.status("connect first", true);
    if (this.pending) return;
    // the box may have been hand-edited; send exactly what it shows
    const text = this.queryBox.value.trim();
    this.pending = true;
    this.dispatchBtn.disabled = true;
    try {
      const resp = await this.api.query(this.sessionId, text, this.backendOverrides());
      this.renderResult(resp.result);
      this.appendHistory(text, resp.result_ref, resp.wall_time_ms);
      this.status(`ok in ${resp.wall_time_ms.toFixed(1)} ms -> ${resp.result_ref.slice(0, 10)}`);
    } catch (err) {
      if (err instanceof ApiError) {
        const first = err.errors[0];
        this.status(first ? `${first.kind}: ${first.message}` : String(err), true);
      } else {
        this.status(`network failure: ${String(err)}`, true);
      }
    } finally {
      this.pending = false;
      this.dispatchBtn.disabled = false;
    }
  }

  private renderResult(result: ResultPayload): void {
    const grids = resultGrids(result);
    const bound = this.activeInput();
    const canvases = [this.leftCanvas, this.rightCanvas];
    canvases.forEach((canvas, i) => {
      const ctx = canvas.getContext("2d");
      if (!ctx) return;
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      if (i >= grids.length) return;
      if (bound) paintInput(ctx, bound.tensor.shape, bound.tensor.data);
      paintOverlay(ctx, grids[i]);
    });
    el<HTMLElement>("map-right-wrap").style.display = grids.length > 1 ? "" : "none";
  }

  private drawInput(): void {
    const bound = this.activeInput();
    const ctx = this.inputCanvas.getContext("2d");
    if (!bound || !ctx) return;
    paintInput(ctx, bound.tensor.shape, bound.tensor.data);
    const grid = this.gridShape();
    if (this.composer.rect && grid) {
      const { r0, c0, r1, c1 } = this.composer.rect;
      const cw = this.inputCanvas.width / grid.w;
      const ch = this.inputCanvas.height / grid.h;
      ctx.strokeStyle = "#2d8cff";
      ctx.lineWidth = 2;
      ctx.strokeRect(c0 * cw, r0 * ch, (c1 - c0 + 1) * cw, (r1 - r0 + 1) * ch);
    }
  }

  private appendHistory(text: string, ref: string, wallMs: number): void {
    const item = document.createElement("li");
    item.textContent = `${text}  [${wallMs.toFixed(1)} ms]  ${ref.slice(0, 10)}`;
    item.onclick = () => {
      this.queryBox.value = text;
    };
    this.historyList.prepend(item);
  }

  private windowIndices(rect: Rect): number[] {
    const bound = this.activeInput();
    if (!bound) return [];
    const s = bound.tensor.shape;
    const channels = s.length === 3 ? s[0] : 1;
    const h = s.length === 3 ? s[1] : s[0];
    const w = s.length === 3 ? s[2] : s[1];
    const out: number[] = [];
    for (let ch = 0; ch < channels; ch++) {
      for (let r = rect.r0; r <= rect.r1; r++) {
        for (let c = rect.c0; c <= rect.c1; c++) {
          out.push(ch * h * w + r * w + c);
        }
      }
    }
    return out;
  }

  private async applyEdit(edit: Parameters<WorkbenchApi["whatif"]>[2], label: string): Promise<void> {
    const bound = this.activeInput();
    if (!this.sessionId || !bound) return this.status("bind an input first", true);
    try {
      const name = `${bound.name}_edit${++this.derivedCounter}`;
      const { input_ref } = await this.api.whatif(this.sessionId, bound.ref, edit, name);
      const tensor = await this.api.getInput(input_ref);
      this.inputs.set(name, { name, ref: input_ref, tensor });
      this.composer.input = name;
      this.refreshPickers();
      this.refreshComposer();
      this.drawInput();
      this.status(`${label} -> bound as ${name}`);
    } catch (err) {
      this.status(`what-if failed: ${String(err)}`, true);
    }
  }

  private whatifNullify(): Promise<void> {
    const grid = this.gridShape();
    const rect = this.composer.rect ?? (grid ? { r0: 0, c0: 0, r1: grid.h - 1, c1: grid.w - 1 } : null);
    if (!rect) {
      this.status("no spatial input bound", true);
      return Promise.resolve();
    }
    return this.applyEdit(
      { kind: "nullify", window: { indices: this.windowIndices(rect) } },
      "nullified",
    );
  }

  private whatifRotate(): Promise<void> {
    return this.applyEdit(
      { kind: "transform", transform_op: "rotate90", params: [1] },
      "rotated",
    );
  }
}

declare global {
  interface Window {
    workbench?: App;
  }
}

if (typeof document !== "undefined" && document.getElementById("query-text")) {
  const base = new URLSearchParams(location.search).get("api") ?? "http://127.0.0.1:8321";
  window.workbench = new App(base);
}
