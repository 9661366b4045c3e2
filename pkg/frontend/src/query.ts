/** Pure query-composition logic: a structured editor over the service's
 * select / where / join / left-join grammar. The UI state maps onto exactly
 * one statement shape; the emitted text is what gets dispatched (possibly
 * after hand edits). */

import type { Rect } from "./types.js";

export type ComparisonMode = "none" | "join" | "left_join";

export interface ComposerState {
  /** Name the primary model is bound under, e.g. "f". */
  model: string | null;
  /** Name the primary input is bound under, e.g. "x". */
  input: string | null;
  /** Stage index for drill-down; null selects the whole network (`*`). */
  layer: number | null;
  /** Rectangle dragged on the input grid, if any. */
  rect: Rect | null;
  /** Bound window name; takes precedence over rect when both are set. */
  windowName: string | null;
  /** Compare against a second branch. */
  comparison: ComparisonMode;
  /** Second branch bindings (model defaults to the primary model). */
  secondModel: string | null;
  secondInput: string | null;
}

export function emptyComposer(): ComposerState {
  return {
    model: null,
    input: null,
    layer: null,
    rect: null,
    windowName: null,
    comparison: "none",
    secondModel: null,
    secondInput: null,
  };
}

export interface Composed {
  query: string;
}

export interface ComposeFailure {
  reason: string;
}

export function isComposed(r: Composed | ComposeFailure): r is Composed {
  return (r as Composed).query !== undefined;
}

function windowTerm(state: ComposerState): string | null {
  if (state.windowName) return state.windowName;
  if (state.rect) {
    const { r0, c0, r1, c1 } = state.rect;
    return `rect(${r0},${c0},${r1},${c1})`;
  }
  return null;
}

function branch(model: string, input: string, layer: number | null, window: string | null): string {
  const target = layer === null ? "*" : String(layer);
  const where = window === null ? "" : ` where ${window}`;
  return `select ${target} from ${model}(${input})${where}`;
}

/** Compose the single statement the current controls describe, or say why
 * dispatch is disabled. */
export function composeQuery(state: ComposerState): Composed | ComposeFailure {
  if (!state.model) return { reason: "bind a model first" };
  if (!state.input) return { reason: "bind an input first" };
  if (state.layer !== null && (!Number.isInteger(state.layer) || state.layer < 1)) {
    return { reason: "layer index must be a positive integer" };
  }
  if (state.rect) {
    const { r0, c0, r1, c1 } = state.rect;
    if (r0 > r1 || c0 > c1 || r0 < 0 || c0 < 0) {
      return { reason: "rectangle is empty or out of bounds" };
    }
  }
  const window = windowTerm(state);
  const main = branch(state.model, state.input, state.layer, window);
  if (state.comparison === "none") {
    return { query: main };
  }
  const secondModel = state.secondModel ?? state.model;
  const secondInput = state.secondInput ?? (secondModel !== state.model ? state.input : null);
  if (!secondInput) {
    return { reason: "pick a second input (or a second model) to compare" };
  }
  if (secondModel === state.model && secondInput === state.input) {
    return { reason: "comparison needs a different input or model" };
  }
  // joined operands must carry equal windows, so the sub-query repeats the
  // window term; layers may differ but the slider applies to both branches
  const sub = branch(secondModel, secondInput, state.layer, window);
  const keyword = state.comparison === "left_join" ? "left join" : "join";
  return { query: `${main} ${keyword} (${sub})` };
}

/** Case-C style triage band: indices whose score lies strictly between
 * mean + lo*std and mean + hi*std, for human inspection. */
export function uncertainBand(
  scores: number[],
  mean: number,
  std: number,
  lo = 1.25,
  hi = 1.75,
): number[] {
  const lower = mean + lo * std;
  const upper = mean + hi * std;
  const out: number[] = [];
  scores.forEach((s, i) => {
    if (s > lower && s < upper) out.push(i);
  });
  return out;
}
