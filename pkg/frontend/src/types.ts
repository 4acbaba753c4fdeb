// Payload shapes of the synthesis service HTTP API (see docs/service.md).

export type Source = "model" | "oracle";

/** What the viewer can display; "recorded-nearest" shows the oracle at the
 * nearest recorded lead's nominal angle, labeled with that lead. */
export type DisplaySource = Source | "recorded-nearest";

export type SessionStatus = "idle" | "running" | "done" | "error";

export interface ViewAngle {
  theta: number;
  phi: number;
}

export interface RecordInfo {
  record_id: string;
  subject_id: string;
  n_leads: number;
  fs: number;
  duration: number;
  device: string;
}

export interface SessionInfo {
  session_id: string;
  record_id: string;
  recorded_leads: string[];
  status: SessionStatus;
  created_at: number;
  error?: string;
  /** per recorded lead: fitted [dtheta, dphi] in degrees, present when done */
  fitted_deviations?: Record<string, [number, number]>;
}

export interface WaveformResponse {
  session_id: string;
  theta: number;
  phi: number;
  source: Source;
  fs: number;
  samples: number[];
}

export interface PanoramaEntry {
  theta: number;
  phi: number;
  samples: number[];
}

export interface PanoramaResponse {
  session_id: string;
  source: Source;
  fs: number;
  grid: [number, number];
  entries: PanoramaEntry[];
}

export interface LeadMarker extends ViewAngle {
  name: string;
}
