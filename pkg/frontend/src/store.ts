/**
 * Client-side session state for the design console.
 *
 * The store mirrors the service's session resource and adds only
 * presentation state (selected snapshot, cached render bytes, transient
 * notices).  It never computes design state of its own: the budget shown
 * to the user is always the server-reported remaining count, and a
 * feedback request is never issued once that count is zero.  At most one
 * mutating request is in flight per session at any time.
 */

import {
  ApiError,
  ConsoleApi,
  renderPath,
  VIEW_NAMES,
  type SessionResource,
} from "./api.js";
import { stageReached, viewPairs, type ViewPair } from "./compare.js";
import { watchSession } from "./poll.js";

export type Phase = "idle" | "creating" | "running" | "ready" | "failed";

export type ConsoleState = {
  phase: Phase;
  /** Inline error under the creation form, null when the form is clean. */
  formError: string | null;
  /** Retryable transport problem, shown as a banner. */
  banner: string | null;
  /** Short transient notice, e.g. a rejected edit. */
  toast: string | null;
  session: SessionResource | null;
  /** Every stage value observed while watching this session, in order. */
  stagesSeen: string[];
  /** Snapshot currently displayed, null before the first snapshot. */
  selected: number | null;
  /** Render bytes keyed by their service path. */
  renders: Map<string, Uint8Array>;
  inFlight: boolean;
};

export type StartOutcome =
  | { started: true; sessionId: string }
  | { started: false };

export type FeedbackRefusal =
  | "no-session"
  | "empty"
  | "busy"
  | "in-flight"
  | "locked"
  | "not-refined"
  | "no-budget";

export type FeedbackOutcome =
  | { sent: false; reason: FeedbackRefusal }
  | { sent: true; status: "applied" | "budget-exhausted" | "rejected" | "conflict" | "failed" };

export type StoreOptions = {
  pollIntervalMs?: number;
  pollTimeoutMs?: number;
};

/** Server-reported prompts remaining, the only budget source of truth. */
export function promptsRemaining(state: ConsoleState): number | null {
  return state.session ? state.session.human_prompts_remaining : null;
}

/** Why the feedback input is disabled, or null when it is usable. */
export function feedbackDisabledReason(state: ConsoleState): string | null {
  const session = state.session;
  if (session === null) {
    return "no session";
  }
  if (session.error !== null) {
    return "session failed";
  }
  if (session.busy || state.inFlight) {
    return "working";
  }
  if (session.locked) {
    return "session locked";
  }
  if (!stageReached(session.stage, "VisualRefined")) {
    return "not refined yet";
  }
  if (session.human_prompts_remaining <= 0) {
    return "budget exhausted";
  }
  return null;
}

export function canSendFeedback(state: ConsoleState): boolean {
  return feedbackDisabledReason(state) === null;
}

/** Comparison rows for the selected snapshot, previous next to current. */
export function currentPairs(state: ConsoleState): ViewPair[] {
  if (state.session === null || state.selected === null) {
    return [];
  }
  return viewPairs(state.session, state.selected);
}

export class ConsoleStore {
  private readonly api: ConsoleApi;
  private readonly options: StoreOptions;
  private readonly listeners = new Set<(state: ConsoleState) => void>();
  private watch: Promise<void> = Promise.resolve();
  readonly state: ConsoleState = {
    phase: "idle",
    formError: null,
    banner: null,
    toast: null,
    session: null,
    stagesSeen: [],
    selected: null,
    renders: new Map(),
    inFlight: false,
  };

  constructor(api: ConsoleApi, options: StoreOptions = {}) {
    this.api = api;
    this.options = options;
  }

  subscribe(listener: (state: ConsoleState) => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  private absorb(resource: SessionResource): void {
    const previous = this.state.session;
    this.state.session = resource;
    const seen = this.state.stagesSeen;
    if (seen[seen.length - 1] !== resource.stage) {
      seen.push(resource.stage);
    }
    // Follow the newest snapshot unless the user browsed to an older one.
    const previousLatest = previous ? previous.snapshot_index : null;
    if (this.state.selected === null || this.state.selected === previousLatest) {
      this.state.selected = resource.snapshot_index;
    }
    this.notify();
  }

  /**
   * Validate the label and start a session.  An empty label never leaves
   * the client; service rejections (bad input, no backend) land in
   * `formError`; an unreachable service raises the retry banner.
   */
  async startDesign(
    label: string,
    extras: { referenceB64?: string; transcript?: string } = {},
  ): Promise<StartOutcome> {
    this.state.formError = null;
    this.state.banner = null;
    const trimmed = label.trim();
    if (trimmed === "") {
      this.state.formError = "Enter a label for the design.";
      this.notify();
      return { started: false };
    }
    if (this.state.inFlight) {
      return { started: false };
    }
    this.state.inFlight = true;
    this.state.phase = "creating";
    this.notify();
    let resource: SessionResource;
    try {
      resource = await this.api.createSession({
        label: trimmed,
        referenceB64: extras.referenceB64,
        transcript: extras.transcript,
      });
    } catch (error) {
      this.state.phase = "idle";
      if (error instanceof ApiError) {
        this.state.formError = error.message;
      } else {
        this.state.banner = "Cannot reach the design service. Retry when it is back.";
      }
      return { started: false };
    } finally {
      this.state.inFlight = false;
      this.notify();
    }
    this.state.phase = "running";
    this.absorb(resource);
    this.watch = this.watchUntilIdle(resource.id);
    return { started: true, sessionId: resource.id };
  }

  private async watchUntilIdle(sessionId: string): Promise<void> {
    try {
      const final = await watchSession(
        (id) => this.api.getSession(id),
        sessionId,
        (resource) => this.absorb(resource),
        {
          intervalMs: this.options.pollIntervalMs,
          timeoutMs: this.options.pollTimeoutMs,
        },
      );
      this.state.phase = final.error === null ? "ready" : "failed";
      this.notify();
      await this.refreshRenders();
    } catch (error) {
      this.state.phase = "failed";
      this.state.banner = error instanceof Error ? error.message : String(error);
      this.notify();
    }
  }

  /** Resolves once the server-side pipeline has gone idle. */
  untilIdle(): Promise<void> {
    return this.watch;
  }

  /** Re-fetch the session so local state mirrors the server again. */
  async resync(): Promise<void> {
    if (this.state.session === null) {
      return;
    }
    try {
      this.absorb(await this.api.getSession(this.state.session.id));
    } catch {
      this.state.banner = "Cannot reach the design service. Retry when it is back.";
      this.notify();
    }
  }

  /**
   * Submit one feedback prompt.  Refusals are local and issue no request;
   * in particular a zero budget or an in-flight mutation never reaches
   * the network.
   */
  async sendFeedback(text: string): Promise<FeedbackOutcome> {
    const session = this.state.session;
    if (session === null) {
      return { sent: false, reason: "no-session" };
    }
    if (text.trim() === "") {
      return { sent: false, reason: "empty" };
    }
    if (this.state.inFlight) {
      return { sent: false, reason: "in-flight" };
    }
    if (session.busy) {
      return { sent: false, reason: "busy" };
    }
    if (session.locked) {
      return { sent: false, reason: "locked" };
    }
    if (!stageReached(session.stage, "VisualRefined")) {
      return { sent: false, reason: "not-refined" };
    }
    if (session.human_prompts_remaining <= 0) {
      return { sent: false, reason: "no-budget" };
    }
    this.state.inFlight = true;
    this.state.toast = null;
    this.notify();
    try {
      const resource = await this.api.postFeedback(session.id, text.trim());
      this.absorb(resource);
      await this.refreshRenders();
      return { sent: true, status: "applied" };
    } catch (error) {
      if (error instanceof ApiError) {
        if (error.code === "BudgetExhausted") {
          this.state.toast = "Feedback budget exhausted.";
          await this.resync();
          return { sent: true, status: "budget-exhausted" };
        }
        if (error.code === "EditRejected") {
          this.state.toast = "Edit rejected, the model is unchanged.";
          await this.resync();
          return { sent: true, status: "rejected" };
        }
        if (error.code === "SessionBusy") {
          this.state.toast = "The session is busy, try again shortly.";
          await this.resync();
          return { sent: true, status: "conflict" };
        }
        this.state.toast = error.message;
        return { sent: true, status: "failed" };
      }
      this.state.banner = "Cannot reach the design service. Retry when it is back.";
      return { sent: true, status: "failed" };
    } finally {
      this.state.inFlight = false;
      this.notify();
    }
  }

  /** Lock the session; further feedback is refused by the service. */
  async finalizeDesign(): Promise<boolean> {
    const session = this.state.session;
    if (session === null || this.state.inFlight) {
      return false;
    }
    this.state.inFlight = true;
    this.notify();
    try {
      this.absorb(await this.api.postFinalize(session.id));
      return true;
    } catch (error) {
      if (error instanceof ApiError) {
        this.state.toast = error.message;
      } else {
        this.state.banner = "Cannot reach the design service. Retry when it is back.";
      }
      return false;
    } finally {
      this.state.inFlight = false;
      this.notify();
    }
  }

  /** Browse to one snapshot of the history. */
  async selectSnapshot(index: number): Promise<void> {
    const session = this.state.session;
    if (session === null || index < 0 || index >= session.snapshot_count) {
      return;
    }
    this.state.selected = index;
    this.notify();
    await this.refreshRenders();
  }

  /**
   * Make sure every image of the current comparison rows is cached.
   * Snapshots never change once written, so cached bytes stay valid.
   */
  async refreshRenders(): Promise<void> {
    const session = this.state.session;
    const selected = this.state.selected;
    if (session === null || selected === null) {
      return;
    }
    const wanted: Array<{ index: number; view: (typeof VIEW_NAMES)[number]; key: string }> = [];
    for (const index of [selected - 1, selected]) {
      if (index < 0 || index >= session.snapshot_count) {
        continue;
      }
      for (const view of VIEW_NAMES) {
        const key = renderPath(session.id, index, view);
        if (!this.state.renders.has(key)) {
          wanted.push({ index, view, key });
        }
      }
    }
    try {
      await Promise.all(
        wanted.map(async ({ index, view, key }) => {
          const bytes = await this.api.fetchRender(session.id, index, view);
          this.state.renders.set(key, bytes);
        }),
      );
    } catch {
      this.state.banner = "Some renders failed to load. Retry when the service is back.";
    }
    this.notify();
  }

  /** Bytes and a filename for the selected snapshot's model. */
  async downloadModel(): Promise<{ filename: string; bytes: Uint8Array } | null> {
    const session = this.state.session;
    const selected = this.state.selected;
    if (session === null || selected === null) {
      return null;
    }
    try {
      const bytes = await this.api.fetchModel(session.id, selected);
      return { filename: `${session.id}-snapshot-${selected}.xml`, bytes };
    } catch {
      this.state.banner = "Model download failed. Retry when the service is back.";
      this.notify();
      return null;
    }
  }

  dismissBanner(): void {
    this.state.banner = null;
    this.notify();
  }

  dismissToast(): void {
    this.state.toast = null;
    this.notify();
  }
}
