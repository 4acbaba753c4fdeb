// Calibration trigger + status polling. The viewer never invents state: the
// mirror is a verbatim copy of the last server answer, refreshed every poll
// interval while a run is live, so it trails the server by at most one poll.

import { ApiClient, ApiError } from "./api.js";
import type { SessionInfo, SessionStatus } from "./types.js";

export interface CalibrationMirror {
  status: SessionStatus;
  /** true between POST /calibrate and the terminal poll; disables the button */
  busy: boolean;
  fitted?: Record<string, [number, number]>;
  error?: string;
  banner?: string;
}

export interface PollerOptions {
  pollIntervalMs?: number;
  onChange?: (mirror: CalibrationMirror) => void;
  onDone?: (info: SessionInfo) => void;
}

export class CalibrationPoller {
  private mirror: CalibrationMirror = { status: "idle", busy: false };
  private timer: ReturnType<typeof setTimeout> | null = null;
  private readonly pollIntervalMs: number;

  constructor(
    private readonly api: ApiClient,
    private readonly sessionId: string,
    private readonly opts: PollerOptions = {},
  ) {
    this.pollIntervalMs = opts.pollIntervalMs ?? 1000;
  }

  get state(): CalibrationMirror {
    return this.mirror;
  }

  /** POST /calibrate and start polling. A 409 (already running) still starts
   * polling: some client kicked it off, mirror that run. */
  async start(): Promise<void> {
    this.update({ ...this.mirror, busy: true, banner: undefined });
    try {
      await this.api.startCalibration(this.sessionId);
      this.update({ status: "running", busy: true });
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.update({ status: "running", busy: true, banner: "calibration already running" });
      } else {
        const detail = err instanceof ApiError ? err.detail : String(err);
        this.update({ ...this.mirror, busy: false, banner: detail });
        return;
      }
    }
    await this.poll();
  }

  stop(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  private async poll(): Promise<void> {
    let info: SessionInfo;
    try {
      info = await this.api.getSession(this.sessionId);
    } catch (err) {
      const detail = err instanceof ApiError ? err.detail : String(err);
      this.update({ ...this.mirror, busy: false, banner: detail });
      return;
    }
    if (info.status === "running") {
      this.update({ status: "running", busy: true, banner: this.mirror.banner });
      this.timer = setTimeout(() => void this.poll(), this.pollIntervalMs);
      return;
    }
    if (info.status === "error") {
      this.update({ status: "error", busy: false, error: info.error ?? "calibration failed" });
    } else {
      this.update({ status: info.status, busy: false, fitted: info.fitted_deviations });
    }
    this.opts.onDone?.(info);
  }

  private update(mirror: CalibrationMirror): void {
    this.mirror = mirror;
    this.opts.onChange?.(mirror);
  }
}
