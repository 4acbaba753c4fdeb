// Nominal (theta, phi) of every lead in the acquisition catalog, in degrees.
// Mirrors the server-side catalog; sessions report recorded leads by name and
// the picker places their markers from this table.

import type { LeadMarker, ViewAngle } from "./types.js";

export const LEAD_CATALOG: Readonly<Record<string, ViewAngle>> = {
  "I": { theta: 90, phi: 90 },
  "II": { theta: 150, phi: 90 },
  "III": { theta: 150, phi: -90 },
  "aVR": { theta: 60, phi: -90 },
  "aVL": { theta: 60, phi: 90 },
  "aVF": { theta: 180, phi: 90 },
  "view-1": { theta: 106, phi: -102 },
  "view-2": { theta: 121, phi: -101 },
  "view-3": { theta: 132, phi: -99 },
  "view-4": { theta: 52, phi: -83 },
  "view-5": { theta: 68, phi: -78 },
  "view-6": { theta: 90, phi: -74 },
  "view-7": { theta: 109, phi: -75 },
  "view-8": { theta: 125, phi: -77 },
  "view-9": { theta: 137, phi: -81 },
  "view-10": { theta: 43, phi: -74 },
  "view-11": { theta: 63, phi: -61 },
  "view-12": { theta: 90, phi: -54 },
  "view-13": { theta: 113, phi: -55 },
  "view-14": { theta: 131, phi: -62 },
  "view-15": { theta: 144, phi: -70 },
  "view-16": { theta: 30, phi: -73 },
  "view-17": { theta: 54, phi: -51 },
  "view-18": { theta: 90, phi: -33 },
  "view-19": { theta: 118, phi: -40 },
  "view-20": { theta: 137, phi: -54 },
  "view-21": { theta: 149, phi: -64 },
  "view-22": { theta: 20, phi: 70 },
  "view-23": { theta: 48, phi: 42 },
  "view-24": { theta: 90, phi: 11 },
  "view-25": { theta: 122, phi: 32 },
  "view-26": { theta: 141, phi: 51 },
  "view-27": { theta: 153, phi: 63 },
  "view-28": { theta: 30, phi: 69 },
  "view-29": { theta: 54, phi: 48 },
  "view-30": { theta: 90, phi: 32 },
  "view-31": { theta: 119, phi: 41 },
  "view-32": { theta: 139, phi: 55 },
  "view-33": { theta: 152, phi: 67 },
  "view-34": { theta: 40, phi: 80 },
  "view-35": { theta: 60, phi: 71 },
  "view-36": { theta: 90, phi: 65 },
  "view-37": { theta: 117, phi: 66 },
  "view-38": { theta: 135, phi: 69 },
  "view-39": { theta: 147, phi: 77 },
  "view-40": { theta: 112, phi: 105 },
  "view-41": { theta: 129, phi: 103 },
  "view-42": { theta: 140, phi: 100 },
};

export function markersFor(leadNames: readonly string[]): LeadMarker[] {
  const out: LeadMarker[] = [];
  for (const name of leadNames) {
    const angle = LEAD_CATALOG[name];
    if (angle) out.push({ name, ...angle });
  }
  return out;
}
