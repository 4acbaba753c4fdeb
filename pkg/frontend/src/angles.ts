// Angle arithmetic for the planar (theta, phi) picker. Theta is inclination
// in [0, 180]; phi is azimuth in (-180, 180], periodic, so dragging across
// +180 wraps to the negative side instead of leaving the valid range.

import type { LeadMarker, ViewAngle } from "./types.js";

const DEG = Math.PI / 180;

export function wrapPhi(phi: number): number {
  const p = ((((phi + 180) % 360) + 360) % 360) - 180; // [-180, 180)
  return p === -180 ? 180 : p;
}

export function clampTheta(theta: number): number {
  return Math.min(180, Math.max(0, theta));
}

export function normalizeAngle(a: ViewAngle): ViewAngle {
  return { theta: clampTheta(a.theta), phi: wrapPhi(a.phi) };
}

/** Great-circle separation in degrees (seam-aware: phi 179 vs -179 is 2 deg
 * apart at the equator, not 358). */
export function angularDistanceDeg(a: ViewAngle, b: ViewAngle): number {
  const dot =
    Math.sin(a.theta * DEG) * Math.sin(b.theta * DEG) * Math.cos((a.phi - b.phi) * DEG) +
    Math.cos(a.theta * DEG) * Math.cos(b.theta * DEG);
  return Math.acos(Math.min(1, Math.max(-1, dot))) / DEG;
}

export function nearestMarker(angle: ViewAngle, markers: readonly LeadMarker[]): LeadMarker | null {
  let best: LeadMarker | null = null;
  let bestDist = Infinity;
  for (const m of markers) {
    const d = angularDistanceDeg(angle, m);
    if (d < bestDist) {
      bestDist = d;
      best = m;
    }
  }
  return best;
}

/** Clicking at `angle` snaps to a recorded-lead marker when one is within
 * `tolDeg`; otherwise the click lands where it was. */
export function snapToMarker(
  angle: ViewAngle,
  markers: readonly LeadMarker[],
  tolDeg = 6,
): ViewAngle {
  const near = nearestMarker(angle, markers);
  if (near !== null && angularDistanceDeg(angle, near) <= tolDeg) {
    return { theta: near.theta, phi: near.phi };
  }
  return normalizeAngle(angle);
}

/** Cache key for waveforms: angles quantized well below any visible step. */
export function angleKey(a: ViewAngle, source: string): string {
  return `${source}|${a.theta.toFixed(4)}|${a.phi.toFixed(4)}`;
}
