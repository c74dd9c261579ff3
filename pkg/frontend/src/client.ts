/**
 * Thin client for the removal service. At most one removal request is in
 * flight; further submissions are rejected until the response lands, which
 * the UI surfaces by disabling the submit button.
 */

import type { RemovePayload } from "./payload.js";

export interface HealthStatus {
  status: "ready" | "degraded";
  model_id: string;
  config_hash: string;
  uptime_s: number;
}

export interface RemoveResult {
  image: string;
  cbkg?: string | null;
  timing_ms: number;
  model_id: string;
}

export class ServiceError extends Error {
  constructor(public status: number, detail: string) {
    super(`service returned ${status}: ${detail}`);
  }
}

export class RemoveClient {
  private inflight = false;

  constructor(
    readonly baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  get busy(): boolean {
    return this.inflight;
  }

  async health(): Promise<HealthStatus> {
    const resp = await this.fetchImpl(`${this.baseUrl}/v1/health`);
    if (!resp.ok) throw new ServiceError(resp.status, await resp.text());
    return (await resp.json()) as HealthStatus;
  }

  async remove(payload: RemovePayload): Promise<RemoveResult> {
    if (this.inflight) {
      throw new ServiceError(0, "a removal request is already in flight");
    }
    this.inflight = true;
    try {
      const resp = await this.fetchImpl(`${this.baseUrl}/v1/remove`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      });
      if (!resp.ok) {
        let detail = "";
        try {
          detail = JSON.stringify(await resp.json());
        } catch {
          detail = await resp.text();
        }
        throw new ServiceError(resp.status, detail);
      }
      return (await resp.json()) as RemoveResult;
    } finally {
      this.inflight = false;
    }
  }
}
