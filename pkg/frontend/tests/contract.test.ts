/** Contract tests against the live service (spawned by the global setup):
 * every query the composer can emit must be accepted by the service parser,
 * rectangle projections must be zero outside the rectangle, and nullifying
 * the whole image must reproduce the baseline's map. */

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import { WorkbenchApi } from "../src/api.js";
import { composeQuery, emptyComposer, isComposed, type ComposerState } from "../src/query.js";
import type { TensorPayload } from "../src/types.js";

const FIXTURES = join(__dirname, "fixtures");

function fixture<T>(name: string): T {
  return JSON.parse(readFileSync(join(FIXTURES, name), "utf8")) as T;
}

const api = new WorkbenchApi(process.env.WORKBENCH_API_URL ?? "http://127.0.0.1:8396");

interface Refs {
  conv: string;
  convAlt: string;
  image: string;
  imageAlt: string;
  zero: string;
}

let refs: Refs;
let imageTensor: TensorPayload;

async function openBoundSession(): Promise<string> {
  const { id } = await api.openSession();
  await api.bindModel(id, "f", refs.conv);
  await api.bindModel(id, "f'", refs.convAlt);
  await api.bindInput(id, "x", refs.image);
  await api.bindInput(id, "x'", refs.imageAlt);
  await api.bindWindowRect(id, "w", [1, 1, 4, 4], refs.image);
  return id;
}

beforeAll(async () => {
  const conv = fixture<Record<string, unknown>>("conv.json");
  imageTensor = fixture<TensorPayload>("image.json");
  const imageAlt = fixture<TensorPayload>("image_alt.json");
  const images = fixture<Record<string, unknown>>("images.json");

  const convAlt = { ...conv, name: "conv-alt" };
  const convRef = (await api.postModel(conv)).ref;
  const convAltRef = (await api.postModel(convAlt)).ref;
  const imageRef = (await api.postInput(imageTensor)).ref;
  const imageAltRef = (await api.postInput(imageAlt)).ref;
  const zeroRef = (await api.postInput({
    shape: imageTensor.shape,
    data: imageTensor.data.map(() => 0),
  })).ref;
  const datasetRef = (await api.postDataset(images)).ref;
  // stage queries need recorded truncations for both bound models
  for (const ref of [convRef, convAltRef]) {
    for (const stage of [1, 2]) {
      const out = await api.truncate(ref, stage, datasetRef);
      expect(out.ref).toBeTruthy();
    }
  }
  refs = { conv: convRef, convAlt: convAltRef, image: imageRef, imageAlt: imageAltRef, zero: zeroRef };
});

function composerStates(): ComposerState[] {
  const base: ComposerState = { ...emptyComposer(), model: "f", input: "x" };
  const states: ComposerState[] = [];
  const windows: Array<Partial<ComposerState>> = [
    {},
    { rect: { r0: 1, c0: 1, r1: 4, c1: 4 } },
    { windowName: "w" },
  ];
  const layers: Array<number | null> = [null, 1, 2];
  for (const layer of layers) {
    for (const win of windows) {
      states.push({ ...base, ...win, layer });
      states.push({ ...base, ...win, layer, comparison: "join", secondInput: "x'" });
      states.push({ ...base, ...win, layer, comparison: "left_join", secondInput: "x'" });
    }
  }
  // cross-model anti-join over the shared input
  states.push({ ...base, comparison: "left_join", secondModel: "f'" });
  return states;
}

describe("UI query contract", () => {
  it("every composer-emitted query is accepted by the service", async () => {
    const session = await openBoundSession();
    const backend = { backend: "shapley-sampled" as const, samples: 24, seed: 1 };
    for (const state of composerStates()) {
      const composed = composeQuery(state);
      expect(isComposed(composed)).toBe(true);
      if (!isComposed(composed)) continue;
      const resp = await api.query(session, composed.query, backend);
      expect(resp.result.kind, composed.query).toBeTruthy();
      expect(resp.result_ref).toMatch(/^[0-9a-f]{64}$/);
    }
  }, 120_000);

  it("rectangle selection yields a projection that is zero outside the rect", async () => {
    const session = await openBoundSession();
    const state: ComposerState = {
      ...emptyComposer(),
      model: "f",
      input: "x",
      rect: { r0: 2, c0: 3, r1: 5, c1: 6 },
    };
    const composed = composeQuery(state);
    if (!isComposed(composed)) throw new Error("composer refused a valid state");
    const resp = await api.query(session, composed.query, {
      backend: "integrated-gradients",
      steps: 12,
    });
    const [, h, w] = resp.result.shape;
    const values = resp.result.values ?? [];
    for (let r = 0; r < h; r++) {
      for (let c = 0; c < w; c++) {
        const inside = r >= 2 && r <= 5 && c >= 3 && c <= 6;
        if (!inside) {
          expect(values[r * w + c], `pixel ${r},${c}`).toBe(0);
        }
      }
    }
    const insideSum = values.reduce((a, b) => a + Math.abs(b), 0);
    expect(insideSum).toBeGreaterThan(0);
  });

  it("nullifying the full image reproduces the baseline's map", async () => {
    const sessionA = await api.openSession().then((s) => s.id);
    await api.bindModel(sessionA, "f", refs.conv);
    const indices = imageTensor.data.map((_, i) => i);
    const edited = await api.whatif(sessionA, refs.image, {
      kind: "nullify",
      window: { indices },
    });
    // content addressing: the fully-nullified image IS the zero baseline
    expect(edited.input_ref).toBe(refs.zero);
    await api.bindInput(sessionA, "x", edited.input_ref);
    const backend = { backend: "shapley-sampled" as const, samples: 32, seed: 6 };
    const mapEdited = await api.query(sessionA, "select * from f(x)", backend);

    const sessionB = await api.openSession().then((s) => s.id);
    await api.bindModel(sessionB, "f", refs.conv);
    await api.bindInput(sessionB, "x", refs.zero);
    const mapBaseline = await api.query(sessionB, "select * from f(x)", backend);
    expect(mapEdited.result_ref).toBe(mapBaseline.result_ref);
    expect(mapEdited.result.values).toEqual(mapBaseline.result.values);
  });

  it("rerunning a history entry reproduces the result ref", async () => {
    const session = await openBoundSession();
    const backend = { backend: "smoothgrad" as const, noise_count: 16, seed: 9 } as const;
    const q = "select 1 from f(x) where w";
    const first = await api.query(session, q, backend);
    const history = await api.history(session);
    const entry = history.entries[history.entries.length - 1];
    expect(entry.query_text).toBe(q);
    const replay = await api.query(session, entry.query_text, backend);
    expect(replay.result_ref).toBe(first.result_ref);
  });

  it("surfaces validation kinds from rejected queries", async () => {
    const session = await openBoundSession();
    await expect(api.query(session, "select 9 from f(x)")).rejects.toMatchObject({
      status: 400,
      errors: [{ kind: "undefined-composition" }],
    });
  });
});
