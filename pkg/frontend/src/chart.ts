// Canvas overlay of model vs oracle traces with shared axes (seconds vs
// amplitude) and a client-side PSNR readout. Layout math is pure so it can
// be tested without a DOM.

import { psnrDb } from "./psnr.js";

export interface Trace {
  label: string;
  samples: readonly number[];
  color: string;
  dashed?: boolean;
}

export interface PlotLayout {
  x0: number;
  y0: number;
  plotWidth: number;
  plotHeight: number;
  tMax: number;
  yMin: number;
  yMax: number;
  toX: (tSec: number) => number;
  toY: (v: number) => number;
}

const MARGIN = { left: 48, right: 12, top: 10, bottom: 26 };

export function computeLayout(
  traces: readonly Trace[],
  fs: number,
  width: number,
  height: number,
  spanSec = 10,
): PlotLayout {
  let yMin = Infinity;
  let yMax = -Infinity;
  let n = 0;
  for (const t of traces) {
    n = Math.max(n, t.samples.length);
    for (const v of t.samples) {
      if (v < yMin) yMin = v;
      if (v > yMax) yMax = v;
    }
  }
  if (!isFinite(yMin)) {
    yMin = -1;
    yMax = 1;
  }
  if (yMin === yMax) {
    yMin -= 0.5;
    yMax += 0.5;
  }
  const pad = 0.05 * (yMax - yMin);
  yMin -= pad;
  yMax += pad;
  const tMax = Math.min(spanSec, n > 0 ? n / fs : spanSec);
  const plotWidth = width - MARGIN.left - MARGIN.right;
  const plotHeight = height - MARGIN.top - MARGIN.bottom;
  return {
    x0: MARGIN.left,
    y0: MARGIN.top,
    plotWidth,
    plotHeight,
    tMax,
    yMin,
    yMax,
    toX: (tSec) => MARGIN.left + (tSec / tMax) * plotWidth,
    toY: (v) => MARGIN.top + (1 - (v - yMin) / (yMax - yMin)) * plotHeight,
  };
}

export function overlayPsnrText(model?: readonly number[], oracle?: readonly number[]): string {
  if (!model || !oracle || model.length !== oracle.length || oracle.length === 0) {
    return "";
  }
  try {
    return `PSNR ${psnrDb(model, oracle).toFixed(2)} dB`;
  } catch {
    return "";
  }
}

export function renderOverlay(
  canvas: HTMLCanvasElement,
  traces: readonly Trace[],
  fs: number,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const layout = computeLayout(traces, fs, width, height);
  drawAxes(ctx, layout);
  for (const trace of traces) {
    ctx.strokeStyle = trace.color;
    ctx.lineWidth = 1.25;
    ctx.setLineDash(trace.dashed ? [5, 4] : []);
    ctx.beginPath();
    trace.samples.forEach((v, i) => {
      const x = layout.toX(i / fs);
      const y = layout.toY(v);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }
  ctx.setLineDash([]);
}

function drawAxes(ctx: CanvasRenderingContext2D, l: PlotLayout): void {
  ctx.strokeStyle = "#888";
  ctx.fillStyle = "#555";
  ctx.lineWidth = 1;
  ctx.font = "11px sans-serif";
  ctx.strokeRect(l.x0, l.y0, l.plotWidth, l.plotHeight);
  const nTicks = 5;
  for (let i = 0; i <= nTicks; i++) {
    const t = (i / nTicks) * l.tMax;
    const x = l.toX(t);
    ctx.fillText(`${t.toFixed(1)}s`, x - 8, l.y0 + l.plotHeight + 16);
    const v = l.yMin + (i / nTicks) * (l.yMax - l.yMin);
    ctx.fillText(v.toFixed(2), 4, l.toY(v) + 3);
  }
}
