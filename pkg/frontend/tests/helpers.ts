/**
 * Test doubles and process helpers for the console suite.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

import type { SessionResource, ViewName } from "../src/api.js";

export function makeResource(overrides: Partial<SessionResource> = {}): SessionResource {
  const base: SessionResource = {
    id: "abc123def456",
    label: "a garden turtle robot",
    stage: "Finalized",
    locked: false,
    busy: false,
    visual_rounds_used: 2,
    visual_rounds_remaining: 1,
    human_prompts_used: 0,
    human_prompts_remaining: 3,
    snapshot_count: 2,
    snapshot_index: 1,
    model_url: "/sessions/abc123def456/snapshots/1/model.xml",
    render_urls: {
      front: "/sessions/abc123def456/snapshots/1/render/front.png",
      left: "/sessions/abc123def456/snapshots/1/render/left.png",
      top: "/sessions/abc123def456/snapshots/1/render/top.png",
      threequarter: "/sessions/abc123def456/snapshots/1/render/threequarter.png",
    },
    reference_url: null,
    error: null,
  };
  return { ...base, ...overrides };
}

const PNG_MAGIC = new Uint8Array([0x89, 0x50, 0x4e, 0x47]);

/** Deterministic fake PNG bytes, distinct per path. */
export function fakePng(path: string): Uint8Array {
  const tail = new TextEncoder().encode(path);
  const bytes = new Uint8Array(PNG_MAGIC.length + tail.length);
  bytes.set(PNG_MAGIC, 0);
  bytes.set(tail, PNG_MAGIC.length);
  return bytes;
}

export type PlannedOutcome =
  | { kind: "json"; status: number; body: unknown }
  | { kind: "bytes"; status: number; body: Uint8Array }
  | { kind: "network" }
  | { kind: "defer"; promise: Promise<PlannedOutcome> };

type SettledOutcome = Exclude<PlannedOutcome, { kind: "defer" }>;

async function settle(outcome: PlannedOutcome): Promise<SettledOutcome> {
  return outcome.kind === "defer" ? settle(await outcome.promise) : outcome;
}

export function deferredOutcome(): {
  outcome: PlannedOutcome;
  resolve: (outcome: PlannedOutcome) => void;
} {
  let resolve!: (outcome: PlannedOutcome) => void;
  const promise = new Promise<PlannedOutcome>((r) => {
    resolve = r;
  });
  return { outcome: { kind: "defer", promise }, resolve };
}

/**
 * In-memory double of the session service.  Unplanned requests fall back
 * to contract-shaped defaults driven by the mutable `resource`; tests
 * queue explicit outcomes per "METHOD /path" to script error cases.
 */
export class ScriptedService {
  resource: SessionResource | null = null;
  readonly requests: string[] = [];
  private readonly plans = new Map<string, PlannedOutcome[]>();

  plan(method: string, path: string, outcome: PlannedOutcome): void {
    const key = `${method} ${path}`;
    const queue = this.plans.get(key) ?? [];
    queue.push(outcome);
    this.plans.set(key, queue);
  }

  /** Fetch-compatible entry point; pass to ConsoleApi. */
  readonly fetch: typeof fetch = async (input, init) => {
    const url = typeof input === "string" ? input : input instanceof URL ? input.href : input.url;
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const method = init?.method ?? "GET";
    this.requests.push(`${method} ${path}`);
    const planned = this.plans.get(`${method} ${path}`)?.shift();
    const outcome = await settle(planned ?? this.fallback(method, path, init));
    if (outcome.kind === "network") {
      throw new TypeError("fetch failed");
    }
    if (outcome.kind === "bytes") {
      return new Response(new Uint8Array(outcome.body).buffer as ArrayBuffer, {
        status: outcome.status,
        headers: { "content-type": "image/png" },
      });
    }
    return new Response(JSON.stringify(outcome.body), {
      status: outcome.status,
      headers: { "content-type": "application/json" },
    });
  };

  private fallback(method: string, path: string, init?: RequestInit): PlannedOutcome {
    if (method === "POST" && path === "/sessions") {
      if (this.resource === null) {
        return { kind: "json", status: 500, body: { code: "NotScripted", message: path } };
      }
      return { kind: "json", status: 201, body: structuredClone(this.resource) };
    }
    if (this.resource !== null && path === `/sessions/${this.resource.id}`) {
      return { kind: "json", status: 200, body: structuredClone(this.resource) };
    }
    if (this.resource !== null && method === "POST"
        && path === `/sessions/${this.resource.id}/feedback`) {
      return this.applyFeedback(init);
    }
    if (/\/render\/[a-z]+\.png$/.test(path) || path.endsWith("/model.xml")) {
      return { kind: "bytes", status: 200, body: fakePng(path) };
    }
    return { kind: "json", status: 404, body: { code: "UnknownRoute", message: path } };
  }

  private applyFeedback(init?: RequestInit): PlannedOutcome {
    const resource = this.resource!;
    const text = init?.body ? (JSON.parse(String(init.body)) as { text?: string }).text : "";
    if (typeof text !== "string" || text.trim() === "") {
      return {
        kind: "json",
        status: 400,
        body: { code: "InvalidInput", message: "text must be a nonempty string" },
      };
    }
    if (resource.human_prompts_remaining <= 0) {
      return {
        kind: "json",
        status: 409,
        body: { code: "BudgetExhausted", message: "human feedback budget exhausted" },
      };
    }
    resource.human_prompts_used += 1;
    resource.human_prompts_remaining -= 1;
    resource.snapshot_count += 1;
    const latest = resource.snapshot_count - 1;
    resource.snapshot_index = latest;
    const base = `/sessions/${resource.id}/snapshots/${latest}`;
    resource.model_url = `${base}/model.xml`;
    const views: ViewName[] = ["front", "left", "top", "threequarter"];
    resource.render_urls = Object.fromEntries(
      views.map((view) => [view, `${base}/render/${view}.png`]),
    );
    return { kind: "json", status: 200, body: structuredClone(resource) };
  }
}

export function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string") {
        probe.close(() => reject(new Error("no port assigned")));
        return;
      }
      const { port } = address;
      probe.close(() => resolve(port));
    });
  });
}

export type ServiceHandle = {
  port: number;
  baseUrl: string;
  dataDir: string;
  stop: () => void;
};

/**
 * Launch the real design service with replay transcripts and wait for
 * its health endpoint.  The caller owns `stop()`.
 */
export async function startService(transcriptsDir: string): Promise<ServiceHandle> {
  const port = await freePort();
  const dataDir = mkdtempSync(join(tmpdir(), "console-e2e-"));
  const child: ChildProcess = spawn("python3", ["-m", "morphoforge.service"], {
    env: {
      ...process.env,
      MORPHOFORGE_DATA_DIR: dataDir,
      MORPHOFORGE_TRANSCRIPTS: transcriptsDir,
      PORT: String(port),
    },
    stdio: ["ignore", "pipe", "pipe"],
  });
  const logs: Buffer[] = [];
  child.stdout?.on("data", (chunk: Buffer) => logs.push(chunk));
  child.stderr?.on("data", (chunk: Buffer) => logs.push(chunk));

  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const response = await fetch(`${baseUrl}/healthz`);
      if (response.ok) {
        break;
      }
    } catch {
      // Still starting.
    }
    if (child.exitCode !== null || Date.now() > deadline) {
      child.kill();
      throw new Error(`service did not come up: ${Buffer.concat(logs).toString()}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  return {
    port,
    baseUrl,
    dataDir,
    stop: () => {
      child.kill("SIGTERM");
    },
  };
}
