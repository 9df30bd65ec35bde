/**
 * Gateway client. Session creation, scenario fetch, and ratings go over
 * HTTP; chat messages go over the WebSocket stream when available, with the
 * plain POST /sessions/{id}/messages endpoint as fallback transport (same
 * wire schema either way).
 *
 * The HTTP layer is injectable so tests can run against an in-memory
 * gateway implementing the same contract.
 */
import {
  MessageResponse,
  OutboundMessage,
  Rating,
  ScenarioSummary,
  SessionCreated,
} from "./protocol";

export interface HttpError {
  status: number;
  detail: string;
}

export interface GatewayTransport {
  get(path: string): Promise<unknown>;
  post(path: string, body: unknown): Promise<unknown>;
}

export class GatewayError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "GatewayError";
  }
}

export function fetchTransport(baseUrl: string): GatewayTransport {
  async function request(path: string, init?: RequestInit): Promise<unknown> {
    const res = await fetch(baseUrl + path, init);
    const body = await res.json().catch(() => ({}));
    if (!res.ok) {
      const detail =
        typeof (body as { detail?: string }).detail === "string"
          ? (body as { detail: string }).detail
          : res.statusText;
      throw new GatewayError(res.status, detail);
    }
    return body;
  }
  return {
    get: (path) => request(path),
    post: (path, body) =>
      request(path, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      }),
  };
}

export class GatewayClient {
  constructor(private readonly transport: GatewayTransport) {}

  fetchScenario(scenarioId: string): Promise<ScenarioSummary> {
    return this.transport.get(
      `/scenarios/${encodeURIComponent(scenarioId)}`,
    ) as Promise<ScenarioSummary>;
  }

  createSession(
    scenarioId: string,
    humanRole: "buyer" | "seller",
  ): Promise<SessionCreated> {
    return this.transport.post("/sessions", {
      scenario_id: scenarioId,
      human_role: humanRole,
    }) as Promise<SessionCreated>;
  }

  sendMessage(
    sessionId: string,
    message: OutboundMessage,
  ): Promise<MessageResponse> {
    return this.transport.post(
      `/sessions/${encodeURIComponent(sessionId)}/messages`,
      message,
    ) as Promise<MessageResponse>;
  }

  submitRating(sessionId: string, rating: Rating): Promise<{ ok: boolean }> {
    return this.transport.post(
      `/sessions/${encodeURIComponent(sessionId)}/rating`,
      rating,
    ) as Promise<{ ok: boolean }>;
  }
}

/** Retry an operation with linear backoff; surfaces the last failure. */
export async function withRetry<T>(
  op: () => Promise<T>,
  attempts = 3,
  delayMs = 500,
  sleep: (ms: number) => Promise<void> = (ms) =>
    new Promise((resolve) => setTimeout(resolve, ms)),
): Promise<T> {
  let lastError: unknown;
  for (let i = 0; i < attempts; i += 1) {
    try {
      return await op();
    } catch (error) {
      lastError = error;
      if (error instanceof GatewayError && error.status < 500) throw error;
      if (i + 1 < attempts) await sleep(delayMs * (i + 1));
    }
  }
  throw lastError;
}
