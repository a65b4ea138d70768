/**
 * Typed client for the robot design session service.
 *
 * Every method mirrors one HTTP route and returns the parsed body.
 * Non-2xx responses carry a `{code, message}` JSON body and are thrown
 * as {@link ApiError}; transport failures propagate as the underlying
 * fetch rejection so callers can tell "service said no" from
 * "service unreachable".
 */

export type ViewName = "front" | "left" | "top" | "threequarter";

/** View presets in the order the service renders them. */
export const VIEW_NAMES: readonly ViewName[] = ["front", "left", "top", "threequarter"];

export type SessionError = {
  code: string;
  message: string;
};

/** One session as reported by the service, field for field. */
export type SessionResource = {
  id: string;
  label: string;
  stage: "Created" | "Structured" | "Built" | "VisualRefined" | "Finalized" | string;
  locked: boolean;
  busy: boolean;
  visual_rounds_used: number;
  visual_rounds_remaining: number;
  human_prompts_used: number;
  human_prompts_remaining: number;
  snapshot_count: number;
  snapshot_index: number | null;
  model_url: string | null;
  render_urls: Partial<Record<ViewName, string>>;
  reference_url: string | null;
  error: SessionError | null;
};

export type CreateSessionRequest = {
  label: string;
  referenceB64?: string;
  transcript?: string;
  constraints?: {
    max_components?: number;
    max_links_per_component?: number;
    require_symmetry?: boolean;
  };
};

/** A non-2xx response from the service. */
export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}

/** Path of the stored model for one snapshot. */
export function modelPath(sessionId: string, index: number): string {
  return `/sessions/${encodeURIComponent(sessionId)}/snapshots/${index}/model.xml`;
}

/** Path of one rendered view of one snapshot. */
export function renderPath(sessionId: string, index: number, view: ViewName): string {
  return `/sessions/${encodeURIComponent(sessionId)}/snapshots/${index}/render/${view}.png`;
}

async function throwApiError(response: Response): Promise<never> {
  let code = "UnknownError";
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = await response.json();
    if (body && typeof body.code === "string") {
      code = body.code;
      message = typeof body.message === "string" ? body.message : message;
    }
  } catch {
    // Non-JSON error body, keep the status line message.
  }
  throw new ApiError(response.status, code, message);
}

export class ConsoleApi {
  private readonly base: string;
  private readonly fetchImpl: typeof fetch;

  constructor(baseUrl = "", fetchImpl: typeof fetch = fetch) {
    this.base = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl;
  }

  private async requestJson<T>(path: string, options?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.base + path, options);
    if (!response.ok) {
      await throwApiError(response);
    }
    return (await response.json()) as T;
  }

  private async requestBytes(path: string): Promise<Uint8Array> {
    const response = await this.fetchImpl(this.base + path);
    if (!response.ok) {
      await throwApiError(response);
    }
    return new Uint8Array(await response.arrayBuffer());
  }

  async health(): Promise<boolean> {
    const body = await this.requestJson<{ status: string }>("/healthz");
    return body.status === "ok";
  }

  /** Start a design session; the pipeline runs server-side. */
  createSession(request: CreateSessionRequest): Promise<SessionResource> {
    const payload: Record<string, unknown> = { label: request.label };
    if (request.referenceB64 !== undefined) {
      payload.reference_b64 = request.referenceB64;
    }
    if (request.transcript !== undefined) {
      payload.transcript = request.transcript;
    }
    if (request.constraints !== undefined) {
      payload.constraints = request.constraints;
    }
    return this.requestJson<SessionResource>("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  getSession(sessionId: string): Promise<SessionResource> {
    return this.requestJson<SessionResource>(`/sessions/${encodeURIComponent(sessionId)}`);
  }

  /** Submit one human feedback prompt; returns the updated session. */
  postFeedback(sessionId: string, text: string): Promise<SessionResource> {
    return this.requestJson<SessionResource>(
      `/sessions/${encodeURIComponent(sessionId)}/feedback`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text }),
      },
    );
  }

  postFinalize(sessionId: string): Promise<SessionResource> {
    return this.requestJson<SessionResource>(
      `/sessions/${encodeURIComponent(sessionId)}/finalize`,
      { method: "POST" },
    );
  }

  fetchModel(sessionId: string, index: number): Promise<Uint8Array> {
    return this.requestBytes(modelPath(sessionId, index));
  }

  fetchRender(sessionId: string, index: number, view: ViewName): Promise<Uint8Array> {
    return this.requestBytes(renderPath(sessionId, index, view));
  }

  fetchReference(referenceUrl: string): Promise<Uint8Array> {
    return this.requestBytes(referenceUrl);
  }
}
