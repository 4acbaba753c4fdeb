// DOM composition: record/session picker, planar angle map, source toggles,
// calibrate button with fitted-deviation table, and the waveform overlay.

import { ApiClient, ApiError } from "./api.js";
import { nearestMarker, normalizeAngle, snapToMarker } from "./angles.js";
import { markersFor } from "./catalog.js";
import { CalibrationPoller } from "./calibration.js";
import { overlayPsnrText, renderOverlay, type Trace } from "./chart.js";
import { LatestWins } from "./scheduler.js";
import { ViewerStore } from "./store.js";
import type { LeadMarker, Source, ViewAngle, WaveformResponse } from "./types.js";

const api = new ApiClient("");
const store = new ViewerStore();
let markers: LeadMarker[] = [];
let poller: CalibrationPoller | null = null;

const el = {
  records: document.getElementById("records") as HTMLSelectElement,
  open: document.getElementById("open-session") as HTMLButtonElement,
  map: document.getElementById("angle-map") as HTMLCanvasElement,
  overlay: document.getElementById("overlay") as HTMLCanvasElement,
  banner: document.getElementById("banner") as HTMLDivElement,
  angleLabel: document.getElementById("angle-label") as HTMLSpanElement,
  psnr: document.getElementById("psnr") as HTMLSpanElement,
  showModel: document.getElementById("show-model") as HTMLInputElement,
  showOracle: document.getElementById("show-oracle") as HTMLInputElement,
  showNearest: document.getElementById("show-nearest") as HTMLInputElement,
  calibrate: document.getElementById("calibrate") as HTMLButtonElement,
  calibStatus: document.getElementById("calib-status") as HTMLSpanElement,
  fitted: document.getElementById("fitted") as HTMLTableElement,
};

function banner(text: string): void {
  el.banner.textContent = text;
  el.banner.classList.toggle("hidden", text === "");
}

function enabledSources(): Source[] {
  const out: Source[] = [];
  if (el.showModel.checked) out.push("model");
  if (el.showOracle.checked) out.push("oracle");
  return out;
}

type Query = { angle: ViewAngle; sources: Source[] };

function makeScheduler(nSources: number): LatestWins<Query, WaveformResponse[]> {
  // the per-slot interval scales with the bundle size, so total HTTP
  // requests stay <= 10/s no matter how many traces are toggled on
  return new LatestWins<Query, WaveformResponse[]>(
    {
      send: async (q) => {
        if (store.sessionId === null) return [];
        const sid = store.sessionId;
        const out: WaveformResponse[] = [];
        for (const source of q.sources) {
          const cached = store.cache.get(q.angle, source);
          out.push(cached ?? (await api.synthesize(sid, q.angle, source)));
        }
        return out;
      },
      onResult: (_q, responses) => {
        banner("");
        for (const r of responses) store.applyResponse(r);
        redraw();
      },
      onError: (_q, err) => {
        banner(err instanceof ApiError ? err.message : String(err));
      },
    },
    105 * Math.max(1, nSources),
  );
}

let scheduler = makeScheduler(1);

function refresh(): void {
  const sources = enabledSources();
  if (el.showNearest.checked && markers.length > 0) {
    // recorded-nearest pins the view to the closest recorded lead and shows
    // the closed-form reference there (the recording itself on clean data)
    const near = nearestMarker(store.angle, markers);
    if (near) store.setAngle({ theta: near.theta, phi: near.phi });
    if (!sources.includes("oracle")) sources.push("oracle");
  }
  scheduler.issue({ angle: store.angle, sources });
  el.angleLabel.textContent = `theta ${store.angle.theta.toFixed(1)}  phi ${store.angle.phi.toFixed(1)}`;
  redraw();
}

function onTogglesChanged(): void {
  scheduler = makeScheduler(Math.max(1, enabledSources().length));
  refresh();
}

function redraw(): void {
  const traces: Trace[] = [];
  const model = store.displayed("model");
  const oracle = store.displayed("oracle");
  if (el.showModel.checked && model) {
    traces.push({ label: "model", samples: model.samples, color: "#0b6" });
  }
  if (el.showOracle.checked && oracle) {
    traces.push({ label: "oracle", samples: oracle.samples, color: "#06b", dashed: true });
  }
  const fs = model?.fs ?? oracle?.fs ?? 250;
  renderOverlay(el.overlay, traces, fs);
  el.psnr.textContent =
    el.showModel.checked && el.showOracle.checked
      ? overlayPsnrText(model?.samples, oracle?.samples)
      : "";
  drawMap();
}

// -- planar angle map --------------------------------------------------------

function mapToAngle(ev: PointerEvent): ViewAngle {
  const rect = el.map.getBoundingClientRect();
  const phi = ((ev.clientX - rect.left) / rect.width) * 360 - 180;
  const theta = ((ev.clientY - rect.top) / rect.height) * 180;
  return normalizeAngle({ theta, phi });
}

function drawMap(): void {
  const ctx = el.map.getContext("2d");
  if (!ctx) return;
  const { width, height } = el.map;
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#bbb";
  ctx.strokeRect(0, 0, width, height);
  const toXY = (a: ViewAngle) => ({
    x: ((a.phi + 180) / 360) * width,
    y: (a.theta / 180) * height,
  });
  ctx.fillStyle = "#c33";
  for (const m of markers) {
    const { x, y } = toXY(m);
    ctx.beginPath();
    ctx.arc(x, y, 4, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillText(m.name, x + 6, y - 4);
  }
  const cur = toXY(store.angle);
  ctx.strokeStyle = "#06b";
  ctx.beginPath();
  ctx.arc(cur.x, cur.y, 7, 0, 2 * Math.PI);
  ctx.stroke();
}

let dragging = false;
el.map.addEventListener("pointerdown", (ev) => {
  dragging = true;
  el.map.setPointerCapture(ev.pointerId);
  store.setAngle(snapToMarker(mapToAngle(ev), markers));
  refresh();
});
el.map.addEventListener("pointermove", (ev) => {
  if (!dragging) return;
  store.setAngle(mapToAngle(ev));
  refresh();
});
el.map.addEventListener("pointerup", () => {
  dragging = false;
});

// -- session lifecycle -------------------------------------------------------

async function loadRecords(): Promise<void> {
  try {
    const records = await api.listRecords();
    el.records.innerHTML = "";
    for (const r of records) {
      const opt = document.createElement("option");
      opt.value = r.record_id;
      opt.textContent = `${r.subject_id} (${r.n_leads} leads, ${r.duration.toFixed(0)}s, ${r.device})`;
      el.records.appendChild(opt);
    }
  } catch (err) {
    banner(err instanceof ApiError ? err.message : String(err));
  }
}

async function openSession(): Promise<void> {
  const recordId = el.records.value;
  if (!recordId) return;
  try {
    const { session_id } = await api.createSession(recordId);
    store.sessionId = session_id;
    const info = await api.getSession(session_id);
    markers = markersFor(info.recorded_leads);
    el.calibrate.disabled = false;
    banner("");
    refresh();
  } catch (err) {
    banner(err instanceof ApiError ? err.message : String(err));
  }
}

function startCalibration(): void {
  if (store.sessionId === null) return;
  poller?.stop();
  poller = new CalibrationPoller(api, store.sessionId, {
    onChange: (m) => {
      store.calibration = m;
      el.calibrate.disabled = m.busy;
      el.calibStatus.textContent = m.status + (m.banner ? ` (${m.banner})` : "");
      if (m.error) banner(m.error);
      renderFitted(m.fitted);
    },
    onDone: () => {
      store.onCalibrationDone();
      refresh();
    },
  });
  void poller.start();
}

function renderFitted(fitted?: Record<string, [number, number]>): void {
  el.fitted.innerHTML = "";
  if (!fitted) return;
  const head = el.fitted.insertRow();
  for (const h of ["lead", "dtheta", "dphi"]) {
    const c = document.createElement("th");
    c.textContent = h;
    head.appendChild(c);
  }
  for (const [name, [dt, dp]] of Object.entries(fitted)) {
    const row = el.fitted.insertRow();
    row.insertCell().textContent = name;
    row.insertCell().textContent = dt.toFixed(2);
    row.insertCell().textContent = dp.toFixed(2);
  }
}

el.open.addEventListener("click", () => void openSession());
el.calibrate.addEventListener("click", startCalibration);
for (const box of [el.showModel, el.showOracle, el.showNearest]) {
  box.addEventListener("change", onTogglesChanged);
}

void loadRecords();
drawMap();
