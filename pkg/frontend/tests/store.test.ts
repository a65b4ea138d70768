import { beforeEach, describe, expect, it } from "vitest";

import { ConsoleApi, renderPath } from "../src/api.js";
import {
  canSendFeedback,
  ConsoleStore,
  currentPairs,
  feedbackDisabledReason,
  promptsRemaining,
} from "../src/store.js";
import {
  deferredOutcome,
  fakePng,
  makeResource,
  ScriptedService,
} from "./helpers.js";

let service: ScriptedService;
let store: ConsoleStore;

beforeEach(() => {
  service = new ScriptedService();
  store = new ConsoleStore(new ConsoleApi("http://svc", service.fetch), {
    pollIntervalMs: 1,
    pollTimeoutMs: 2000,
  });
});

describe("start validation", () => {
  it("refuses an empty label without issuing a request", async () => {
    for (const label of ["", "   ", "\n\t"]) {
      const outcome = await store.startDesign(label);
      expect(outcome.started).toBe(false);
    }
    expect(store.state.formError).toMatch(/label/i);
    expect(store.state.phase).toBe("idle");
    expect(service.requests).toEqual([]);
  });

  it("surfaces a 400 as an inline form error", async () => {
    service.plan("POST", "/sessions", {
      kind: "json",
      status: 400,
      body: { code: "InvalidLabel", message: "label must be a nonempty string" },
    });
    const outcome = await store.startDesign("a robot");
    expect(outcome.started).toBe(false);
    expect(store.state.formError).toBe("label must be a nonempty string");
    expect(store.state.banner).toBeNull();
    expect(store.state.phase).toBe("idle");
  });

  it("surfaces a 503 as an inline form error", async () => {
    service.plan("POST", "/sessions", {
      kind: "json",
      status: 503,
      body: { code: "BackendUnavailable", message: "no backend configured" },
    });
    const outcome = await store.startDesign("a robot");
    expect(outcome.started).toBe(false);
    expect(store.state.formError).toBe("no backend configured");
  });

  it("raises a retryable banner when the service is unreachable", async () => {
    service.plan("POST", "/sessions", { kind: "network" });
    const first = await store.startDesign("a robot");
    expect(first.started).toBe(false);
    expect(store.state.banner).toMatch(/cannot reach/i);

    service.resource = makeResource();
    const second = await store.startDesign("a robot");
    expect(second.started).toBe(true);
    expect(store.state.banner).toBeNull();
  });
});

describe("watching a run", () => {
  it("collects stages and follows the newest snapshot", async () => {
    service.resource = makeResource({ stage: "Created", busy: true, snapshot_count: 0, snapshot_index: null, model_url: null, render_urls: {} });
    service.plan("GET", "/sessions/abc123def456", {
      kind: "json",
      status: 200,
      body: makeResource({ stage: "Built", busy: true, snapshot_count: 1, snapshot_index: 0 }),
    });
    service.plan("GET", "/sessions/abc123def456", {
      kind: "json",
      status: 200,
      body: makeResource({ stage: "VisualRefined", busy: true }),
    });
    service.plan("GET", "/sessions/abc123def456", {
      kind: "json",
      status: 200,
      body: makeResource({ stage: "Finalized", busy: false }),
    });
    const outcome = await store.startDesign("a robot");
    expect(outcome.started).toBe(true);
    await store.untilIdle();
    expect(store.state.phase).toBe("ready");
    expect(store.state.stagesSeen).toEqual(["Created", "Built", "VisualRefined", "Finalized"]);
    expect(store.state.selected).toBe(1);
    const pairs = currentPairs(store.state);
    expect(pairs).toHaveLength(4);
    for (const pair of pairs) {
      expect(store.state.renders.get(pair.currentUrl)).toEqual(fakePng(pair.currentUrl));
      expect(store.state.renders.get(pair.previousUrl!)).toEqual(fakePng(pair.previousUrl!));
    }
  });

  it("marks the session failed when the pipeline errored", async () => {
    service.resource = makeResource({
      stage: "Created",
      busy: false,
      snapshot_count: 0,
      snapshot_index: null,
      error: { code: "TranscriptExhausted", message: "transcript ended early" },
    });
    await store.startDesign("a robot");
    await store.untilIdle();
    expect(store.state.phase).toBe("failed");
    expect(feedbackDisabledReason(store.state)).toBe("session failed");
  });
});

describe("budget indicator", () => {
  it("always mirrors the server-reported remaining count", async () => {
    service.resource = makeResource();
    await store.startDesign("a robot");
    await store.untilIdle();
    expect(promptsRemaining(store.state)).toBe(3);

    // The server is authoritative even when its number is surprising.
    service.plan("POST", "/sessions/abc123def456/feedback", {
      kind: "json",
      status: 200,
      body: makeResource({ human_prompts_used: 1, human_prompts_remaining: 7 }),
    });
    await store.sendFeedback("tweak it");
    expect(promptsRemaining(store.state)).toBe(7);
  });
});

describe("feedback gating", () => {
  it("never issues a request once the server reports zero budget", async () => {
    service.resource = makeResource({ human_prompts_used: 3, human_prompts_remaining: 0 });
    await store.startDesign("a robot");
    await store.untilIdle();
    const before = service.requests.length;
    expect(canSendFeedback(store.state)).toBe(false);
    expect(feedbackDisabledReason(store.state)).toBe("budget exhausted");
    const outcome = await store.sendFeedback("one more");
    expect(outcome).toEqual({ sent: false, reason: "no-budget" });
    expect(service.requests.length).toBe(before);
  });

  it("refuses blank text, locked and busy sessions locally", async () => {
    service.resource = makeResource();
    await store.startDesign("a robot");
    await store.untilIdle();
    const before = service.requests.length;
    expect(await store.sendFeedback("   ")).toEqual({ sent: false, reason: "empty" });
    store.state.session!.locked = true;
    expect(await store.sendFeedback("x")).toEqual({ sent: false, reason: "locked" });
    store.state.session!.locked = false;
    store.state.session!.busy = true;
    expect(await store.sendFeedback("x")).toEqual({ sent: false, reason: "busy" });
    expect(service.requests.length).toBe(before);
  });

  it("keeps a single mutating request in flight", async () => {
    service.resource = makeResource();
    await store.startDesign("a robot");
    await store.untilIdle();
    const gate = deferredOutcome();
    service.plan("POST", "/sessions/abc123def456/feedback", gate.outcome);
    const posts = () =>
      service.requests.filter((line) => line === "POST /sessions/abc123def456/feedback").length;

    const first = store.sendFeedback("make it rounder");
    const second = await store.sendFeedback("make it taller");
    expect(second).toEqual({ sent: false, reason: "in-flight" });
    gate.resolve({
      kind: "json",
      status: 200,
      body: makeResource({ human_prompts_used: 1, human_prompts_remaining: 2 }),
    });
    expect(await first).toEqual({ sent: true, status: "applied" });
    expect(posts()).toBe(1);
  });
});

describe("feedback responses", () => {
  beforeEach(async () => {
    service.resource = makeResource();
    await store.startDesign("a robot");
    await store.untilIdle();
  });

  it("applies an accepted edit and shows the new snapshot next to the previous", async () => {
    const outcome = await store.sendFeedback("shorter legs");
    expect(outcome).toEqual({ sent: true, status: "applied" });
    expect(store.state.session!.snapshot_count).toBe(3);
    expect(store.state.selected).toBe(2);
    const pairs = currentPairs(store.state);
    for (const pair of pairs) {
      expect(pair.previousUrl).toContain("/snapshots/1/");
      expect(pair.currentUrl).toContain("/snapshots/2/");
      expect(store.state.renders.has(pair.currentUrl)).toBe(true);
    }
  });

  it("disables the input after a budget 409 and resyncs with the server", async () => {
    service.plan("POST", "/sessions/abc123def456/feedback", {
      kind: "json",
      status: 409,
      body: { code: "BudgetExhausted", message: "human feedback budget exhausted" },
    });
    service.resource!.human_prompts_used = 3;
    service.resource!.human_prompts_remaining = 0;
    const outcome = await store.sendFeedback("one more");
    expect(outcome).toEqual({ sent: true, status: "budget-exhausted" });
    expect(store.state.toast).toMatch(/budget exhausted/i);
    expect(feedbackDisabledReason(store.state)).toBe("budget exhausted");
    expect(promptsRemaining(store.state)).toBe(0);
  });

  it("shows a rejected-edit toast and leaves views and snapshot index unchanged", async () => {
    const viewsBefore = currentPairs(store.state);
    const indexBefore = store.state.session!.snapshot_index;
    service.plan("POST", "/sessions/abc123def456/feedback", {
      kind: "json",
      status: 422,
      body: { code: "EditRejected", message: "the edit tool call was refused" },
    });
    // A rejected round still consumes server budget.
    service.resource!.human_prompts_used = 1;
    service.resource!.human_prompts_remaining = 2;
    const outcome = await store.sendFeedback("impossible change");
    expect(outcome).toEqual({ sent: true, status: "rejected" });
    expect(store.state.toast).toMatch(/rejected/i);
    expect(store.state.session!.snapshot_index).toBe(indexBefore);
    expect(currentPairs(store.state)).toEqual(viewsBefore);
    expect(promptsRemaining(store.state)).toBe(2);
  });

  it("reports a busy conflict without losing state", async () => {
    service.plan("POST", "/sessions/abc123def456/feedback", {
      kind: "json",
      status: 409,
      body: { code: "SessionBusy", message: "another request holds this session" },
    });
    const outcome = await store.sendFeedback("tweak");
    expect(outcome).toEqual({ sent: true, status: "conflict" });
    expect(store.state.toast).toMatch(/busy/i);
    expect(store.state.session!.snapshot_count).toBe(2);
  });
});

describe("history and download", () => {
  beforeEach(async () => {
    service.resource = makeResource({ snapshot_count: 3, snapshot_index: 2 });
    await store.startDesign("a robot");
    await store.untilIdle();
  });

  it("browses older snapshots with paired presets", async () => {
    await store.selectSnapshot(1);
    const pairs = currentPairs(store.state);
    for (const pair of pairs) {
      expect(pair.previousUrl).toContain("/snapshots/0/");
      expect(pair.currentUrl).toContain("/snapshots/1/");
      expect(store.state.renders.has(pair.currentUrl)).toBe(true);
    }
  });

  it("ignores out-of-range snapshot picks", async () => {
    await store.selectSnapshot(7);
    expect(store.state.selected).toBe(2);
  });

  it("downloads the selected snapshot's model bytes", async () => {
    await store.selectSnapshot(1);
    const model = await store.downloadModel();
    expect(model).not.toBeNull();
    expect(model!.filename).toBe("abc123def456-snapshot-1.xml");
    expect(model!.bytes).toEqual(fakePng("/sessions/abc123def456/snapshots/1/model.xml"));
  });
});

describe("render cache", () => {
  it("fetches each image once and reuses cached bytes", async () => {
    service.resource = makeResource();
    await store.startDesign("a robot");
    await store.untilIdle();
    const key = renderPath("abc123def456", 1, "front");
    const fetched = service.requests.filter((line) => line === `GET ${key}`).length;
    expect(fetched).toBe(1);
    await store.refreshRenders();
    const again = service.requests.filter((line) => line === `GET ${key}`).length;
    expect(again).toBe(1);
  });
});
