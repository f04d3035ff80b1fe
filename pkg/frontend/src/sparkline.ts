/** Loss-curve sparkline geometry (pure) and canvas drawing. */

export interface Point {
  x: number;
  y: number;
}

/** Map a loss curve to polyline points in a width x height box (y down). */
export function sparklinePoints(curve: number[], width: number, height: number): Point[] {
  if (curve.length === 0) return [];
  const lo = Math.min(...curve);
  const hi = Math.max(...curve);
  const span = hi - lo || 1;
  const dx = curve.length > 1 ? width / (curve.length - 1) : 0;
  return curve.map((v, i) => ({
    x: curve.length > 1 ? i * dx : width / 2,
    y: height - ((v - lo) / span) * height,
  }));
}

export function drawSparkline(
  canvas: HTMLCanvasElement,
  curve: number[],
  color = "#4caf50",
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const pts = sparklinePoints(curve, canvas.width - 4, canvas.height - 4);
  if (pts.length === 0) return;
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  pts.forEach((p, i) => {
    if (i === 0) ctx.moveTo(p.x + 2, p.y + 2);
    else ctx.lineTo(p.x + 2, p.y + 2);
  });
  ctx.stroke();
}
