// Viewer state: active session, current angle/source selection, calibration
// mirror, and a waveform cache keyed by (angle, source). The displayed
// waveform is only ever installed from a response whose own labels match the
// current selection, so a label/trace mismatch cannot render even if a stale
// response slips past the scheduler.

import { angleKey, normalizeAngle } from "./angles.js";
import type { CalibrationMirror } from "./calibration.js";
import type { DisplaySource, Source, ViewAngle, WaveformResponse } from "./types.js";

export interface DisplayedWaveform {
  angle: ViewAngle;
  source: Source;
  fs: number;
  samples: number[];
}

export class WaveformCache {
  private map = new Map<string, WaveformResponse>();

  constructor(private readonly capacity = 512) {}

  get(angle: ViewAngle, source: Source): WaveformResponse | undefined {
    const hit = this.map.get(angleKey(angle, source));
    return hit;
  }

  put(resp: WaveformResponse): void {
    const key = angleKey({ theta: resp.theta, phi: resp.phi }, resp.source);
    if (this.map.size >= this.capacity && !this.map.has(key)) {
      const oldest = this.map.keys().next().value;
      if (oldest !== undefined) this.map.delete(oldest);
    }
    this.map.set(key, resp);
  }

  get size(): number {
    return this.map.size;
  }

  invalidate(): void {
    this.map.clear();
  }
}

export class ViewerStore {
  sessionId: string | null = null;
  angle: ViewAngle = { theta: 90, phi: 0 };
  source: DisplaySource = "model";
  calibration: CalibrationMirror = { status: "idle", busy: false };
  readonly cache = new WaveformCache();
  private displayedBySource = new Map<Source, DisplayedWaveform>();

  setAngle(angle: ViewAngle): void {
    this.angle = normalizeAngle(angle);
  }

  /** Install a response as the displayed trace for its source; refuses
   * anything whose labels disagree with the current selection. Returns
   * whether the trace was accepted. */
  applyResponse(resp: WaveformResponse): boolean {
    this.cache.put(resp);
    const matches =
      angleKey({ theta: resp.theta, phi: resp.phi }, "q") === angleKey(this.angle, "q");
    if (!matches) {
      return false;
    }
    this.displayedBySource.set(resp.source, {
      angle: { theta: resp.theta, phi: resp.phi },
      source: resp.source,
      fs: resp.fs,
      samples: resp.samples,
    });
    return true;
  }

  displayed(source: Source): DisplayedWaveform | undefined {
    const d = this.displayedBySource.get(source);
    if (d === undefined) return undefined;
    // a trace for a previous angle is never shown against the new label
    if (angleKey(d.angle, "q") !== angleKey(this.angle, "q")) return undefined;
    return d;
  }

  /** Calibration changed the model: cached model waveforms are stale. */
  onCalibrationDone(): void {
    this.cache.invalidate();
    this.displayedBySource.delete("model");
  }
}
