/**
 * End-to-end console flow against the real session service running with
 * replay transcripts: create a session, watch it refine, spend the whole
 * feedback budget with a view refresh per prompt, see the fourth attempt
 * refused client-side, and download a model byte-identical to what the
 * service stored.
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ConsoleApi, renderPath } from "../src/api.js";
import { stageReached, STAGE_ORDER } from "../src/compare.js";
import {
  canSendFeedback,
  ConsoleStore,
  currentPairs,
  feedbackDisabledReason,
  promptsRemaining,
} from "../src/store.js";
import { startService, type ServiceHandle } from "./helpers.js";

const FIXTURES = fileURLToPath(new URL("./fixtures", import.meta.url));
const MANIFEST = JSON.parse(readFileSync(join(FIXTURES, "manifest.json"), "utf-8")) as {
  designs: Record<string, {
    label: string;
    reference: string;
    human_feedback: string[];
    rejects_human: boolean;
  }>;
};

let service: ServiceHandle;

function designReferenceB64(name: string): string {
  const design = MANIFEST.designs[name]!;
  return readFileSync(join(FIXTURES, design.reference)).toString("base64");
}

function makeStore(): { store: ConsoleStore; log: string[] } {
  const log: string[] = [];
  const loggingFetch: typeof fetch = (input, init) => {
    const url = typeof input === "string" ? input : input instanceof URL ? input.href : input.url;
    log.push(`${init?.method ?? "GET"} ${url.replace(service.baseUrl, "")}`);
    return fetch(input, init);
  };
  const store = new ConsoleStore(new ConsoleApi(service.baseUrl, loggingFetch), {
    pollIntervalMs: 100,
    pollTimeoutMs: 120_000,
  });
  return { store, log };
}

beforeAll(async () => {
  service = await startService(FIXTURES);
}, 60_000);

afterAll(() => {
  service?.stop();
});

describe("console against the live service", () => {
  it("runs the full design flow: refine, three prompts, refusal, download", { timeout: 180_000 }, async () => {
    const design = MANIFEST.designs.console!;
    const { store, log } = makeStore();

    const outcome = await store.startDesign(design.label, {
      referenceB64: designReferenceB64("console"),
      transcript: "console",
    });
    expect(outcome.started).toBe(true);
    await store.untilIdle();

    // The pipeline ran to completion through the visual refinement stage.
    expect(store.state.phase).toBe("ready");
    const session = store.state.session!;
    expect(session.error).toBeNull();
    expect(stageReached(session.stage, "VisualRefined")).toBe(true);
    const seenIndexes = store.state.stagesSeen.map((stage) =>
      STAGE_ORDER.indexOf(stage as (typeof STAGE_ORDER)[number]),
    );
    expect(seenIndexes).toEqual([...seenIndexes].sort((a, b) => a - b));
    expect(session.visual_rounds_used).toBe(2);
    expect(session.snapshot_count).toBe(2);
    expect(promptsRemaining(store.state)).toBe(3);

    // Three prompts, each refreshing the comparison views.
    for (let round = 0; round < design.human_feedback.length; round += 1) {
      const text = design.human_feedback[round]!;
      expect(canSendFeedback(store.state)).toBe(true);
      const sizeBefore = store.state.renders.size;
      const sent = await store.sendFeedback(text);
      expect(sent).toEqual({ sent: true, status: "applied" });

      const updated = store.state.session!;
      expect(updated.snapshot_count).toBe(3 + round);
      expect(store.state.selected).toBe(updated.snapshot_index);
      const pairs = currentPairs(store.state);
      expect(pairs).toHaveLength(4);
      for (const pair of pairs) {
        expect(store.state.renders.has(pair.currentUrl)).toBe(true);
        expect(store.state.renders.has(pair.previousUrl!)).toBe(true);
      }
      expect(store.state.renders.size).toBe(sizeBefore + 4);

      // The indicator is the server's number, verified against a fresh read.
      const fresh = await new ConsoleApi(service.baseUrl).getSession(updated.id);
      expect(promptsRemaining(store.state)).toBe(fresh.human_prompts_remaining);
      expect(fresh.human_prompts_remaining).toBe(2 - round);
    }

    // Fourth attempt: the client refuses before the network.
    expect(promptsRemaining(store.state)).toBe(0);
    expect(canSendFeedback(store.state)).toBe(false);
    expect(feedbackDisabledReason(store.state)).toBe("budget exhausted");
    const feedbackPosts = () => log.filter((line) => line.includes("/feedback")).length;
    expect(feedbackPosts()).toBe(3);
    const refused = await store.sendFeedback("one more tweak");
    expect(refused).toEqual({ sent: false, reason: "no-budget" });
    expect(feedbackPosts()).toBe(3);

    // The downloaded model matches the service-stored bytes exactly.
    const id = store.state.session!.id;
    const selected = store.state.selected!;
    const model = await store.downloadModel();
    expect(model).not.toBeNull();
    const stored = JSON.parse(
      readFileSync(join(service.dataDir, "sessions", id, "session.json"), "utf-8"),
    ) as { snapshots: string[] };
    const expected = Buffer.from(stored.snapshots[selected]!, "utf-8");
    expect(Buffer.from(model!.bytes).equals(expected)).toBe(true);
  });

  it("surfaces a rejected edit without disturbing the views", { timeout: 180_000 }, async () => {
    const design = MANIFEST.designs.reject!;
    const { store } = makeStore();
    const outcome = await store.startDesign(design.label, {
      referenceB64: designReferenceB64("reject"),
      transcript: "reject",
    });
    expect(outcome.started).toBe(true);
    await store.untilIdle();
    expect(store.state.phase).toBe("ready");
    expect(store.state.session!.error).toBeNull();

    const indexBefore = store.state.session!.snapshot_index;
    const pairsBefore = currentPairs(store.state);
    const sent = await store.sendFeedback(design.human_feedback[0]!);
    expect(sent).toEqual({ sent: true, status: "rejected" });
    expect(store.state.toast).toMatch(/rejected/i);
    expect(store.state.session!.snapshot_index).toBe(indexBefore);
    expect(currentPairs(store.state)).toEqual(pairsBefore);
    // The server still charged the prompt; the indicator mirrors it.
    expect(promptsRemaining(store.state)).toBe(2);
  });

  it("reports an unknown backend transcript as an inline form error", async () => {
    const { store } = makeStore();
    const outcome = await store.startDesign("a mystery robot", { transcript: "nope" });
    expect(outcome.started).toBe(false);
    expect(store.state.formError).toMatch(/unknown transcript/);
  });
});
