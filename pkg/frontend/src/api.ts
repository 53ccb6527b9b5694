/**
 * Hub API client. Every request carries the token in SCP-HUB-API-KEY; the
 * event stream is line-delimited JSON with `#` keepalive comments, consumed
 * incrementally and resumed from lastSeq+1 after a drop.
 */

import type { ExperimentStatus, HubEvent, PlanCandidate } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(`${status} ${code}: ${message}`);
  }
}

export class HubApi {
  constructor(
    public baseUrl: string,
    public token: string,
  ) {}

  private headers(): Record<string, string> {
    return { "SCP-HUB-API-KEY": this.token, "Content-Type": "application/json" };
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      const detail = await response.json().catch(() => ({}));
      throw new ApiError(
        response.status,
        (detail as { code?: string }).code ?? "http_error",
        (detail as { message?: string }).message ?? response.statusText,
      );
    }
    return (await response.json()) as T;
  }

  listExperimentStatus(eid: string): Promise<ExperimentStatus> {
    return this.request("GET", `/api/v1/experiments/${eid}`);
  }

  plan(eid: string, body: Record<string, unknown>): Promise<PlanCandidate[]> {
    return this.request("POST", `/api/v1/experiments/${eid}/plan`, body);
  }

  selectPlan(eid: string, planId: string): Promise<unknown> {
    return this.request(
      "POST",
      `/api/v1/experiments/${eid}/plans/${planId}/select`,
      {},
    );
  }

  control(eid: string, action: "pause" | "resume" | "abort"): Promise<unknown> {
    return this.request("POST", `/api/v1/experiments/${eid}/control`, {
      action,
    });
  }
}

export interface StreamHandlers {
  onEvent: (event: HubEvent) => void;
  onStatusChange?: (status: "connected" | "reconnecting" | "closed") => void;
}

/**
 * Long-lived event stream with automatic resume. On any drop it reconnects
 * at `lastSeq + 1`; the view model's seq cursor makes overlap harmless.
 */
export class EventStream {
  private controller: AbortController | null = null;
  private closed = false;
  lastSeq = 0;

  constructor(
    private api: HubApi,
    private experimentId: string,
    private handlers: StreamHandlers,
    fromSeq = 1,
  ) {
    this.lastSeq = fromSeq - 1;
  }

  async run(): Promise<void> {
    let backoff = 500;
    while (!this.closed) {
      this.controller = new AbortController();
      try {
        const response = await fetch(
          `${this.api.baseUrl}/api/v1/experiments/${this.experimentId}` +
            `/events?from_seq=${this.lastSeq + 1}`,
          {
            headers: { "SCP-HUB-API-KEY": this.api.token },
            signal: this.controller.signal,
          },
        );
        if (!response.ok || !response.body) {
          throw new Error(`stream http ${response.status}`);
        }
        this.handlers.onStatusChange?.("connected");
        backoff = 500;
        await this.consume(response.body);
      } catch {
        if (this.closed) break;
      }
      if (this.closed) break;
      this.handlers.onStatusChange?.("reconnecting");
      await new Promise((resolve) => setTimeout(resolve, backoff));
      backoff = Math.min(backoff * 2, 15_000);
    }
    this.handlers.onStatusChange?.("closed");
  }

  private async consume(body: ReadableStream<Uint8Array>): Promise<void> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let newline = buffer.indexOf("\n");
      while (newline >= 0) {
        const line = buffer.slice(0, newline).trim();
        buffer = buffer.slice(newline + 1);
        newline = buffer.indexOf("\n");
        if (!line || line.startsWith("#")) continue; // keepalive comment
        const event = JSON.parse(line) as HubEvent;
        if (event.seq > this.lastSeq) {
          this.lastSeq = event.seq;
          this.handlers.onEvent(event);
        }
      }
    }
  }

  close(): void {
    this.closed = true;
    this.controller?.abort();
  }
}
