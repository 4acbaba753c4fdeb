// Client-side PSNR, identical to the evaluation formula on the server:
// 10*log10(R^2 / MSE) with R = reference dynamic range, capped so exact
// matches stay finite. Overlay numbers must agree with server reports.

export const PSNR_CAP_DB = 99.0;

export function psnrDb(pred: ArrayLike<number>, truth: ArrayLike<number>): number {
  const n = truth.length;
  if (pred.length !== n) {
    throw new Error(`shape mismatch: ${pred.length} vs ${n}`);
  }
  if (n === 0) {
    throw new Error("empty signals");
  }
  let min = Infinity;
  let max = -Infinity;
  for (let i = 0; i < n; i++) {
    const v = truth[i]!;
    if (v < min) min = v;
    if (v > max) max = v;
  }
  const range = max - min;
  if (range === 0) {
    throw new Error("reference lead is constant; dynamic range undefined");
  }
  let acc = 0;
  for (let i = 0; i < n; i++) {
    const d = pred[i]! - truth[i]!;
    acc += d * d;
  }
  const mse = acc / n;
  if (mse === 0) {
    return PSNR_CAP_DB;
  }
  return Math.min(10 * Math.log10((range * range) / mse), PSNR_CAP_DB);
}
