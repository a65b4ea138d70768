/**
 * Poll a session until the server-side pipeline goes idle.
 */

import type { SessionResource } from "./api.js";

export type WatchOptions = {
  intervalMs?: number;
  timeoutMs?: number;
};

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/**
 * Fetch the session repeatedly until `busy` clears, reporting every
 * observed state through `onUpdate`.  Resolves with the final resource;
 * rejects if the deadline passes first.
 */
export async function watchSession(
  fetchSession: (sessionId: string) => Promise<SessionResource>,
  sessionId: string,
  onUpdate: (resource: SessionResource) => void,
  options: WatchOptions = {},
): Promise<SessionResource> {
  const intervalMs = options.intervalMs ?? 500;
  const timeoutMs = options.timeoutMs ?? 120_000;
  const deadline = Date.now() + timeoutMs;

  for (;;) {
    const resource = await fetchSession(sessionId);
    onUpdate(resource);
    if (!resource.busy) {
      return resource;
    }
    if (Date.now() >= deadline) {
      throw new Error(`session ${sessionId} still busy after ${timeoutMs}ms`);
    }
    await sleep(intervalMs);
  }
}
