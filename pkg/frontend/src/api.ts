// Thin typed client for the synthesis service. The fetch implementation is
// injectable so tests run against an in-memory mock server.

import type {
  PanoramaResponse,
  RecordInfo,
  SessionInfo,
  Source,
  ViewAngle,
  WaveformResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export class ApiClient {
  private readonly fetchImpl: FetchLike;

  constructor(
    private readonly baseUrl = "",
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = (await res.json()) as { detail?: unknown };
        if (body && body.detail !== undefined) {
          detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
        }
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  listRecords(): Promise<RecordInfo[]> {
    return this.request("/records");
  }

  uploadRecord(container: BlobPart): Promise<{ record_id: string; subject_id: string; n_leads: number }> {
    return this.request("/records", {
      method: "POST",
      headers: { "content-type": "application/octet-stream" },
      body: new Blob([container]),
    });
  }

  createSession(recordId: string, recordedLeads?: string[]): Promise<{ session_id: string }> {
    const body: Record<string, unknown> = { record_id: recordId };
    if (recordedLeads) body.recorded_leads = recordedLeads;
    return this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getSession(sessionId: string): Promise<SessionInfo> {
    return this.request(`/sessions/${sessionId}`);
  }

  startCalibration(sessionId: string): Promise<{ session_id: string; status: string }> {
    return this.request(`/sessions/${sessionId}/calibrate`, { method: "POST" });
  }

  synthesize(sessionId: string, angle: ViewAngle, source: Source): Promise<WaveformResponse> {
    const q = new URLSearchParams({
      theta: String(angle.theta),
      phi: String(angle.phi),
      source,
    });
    return this.request(`/sessions/${sessionId}/synthesize?${q}`);
  }

  panorama(sessionId: string, rows: number, cols: number, source: Source): Promise<PanoramaResponse> {
    const q = new URLSearchParams({ grid: `${rows}x${cols}`, source });
    return this.request(`/sessions/${sessionId}/panorama?${q}`);
  }
}
