// Top-down 2D canvas renderer: walls, trail, decimated scan, vehicle pose,
// and the safety ring. Pure function of (scenario, latest frame, trail).

import { ScenarioInfo, TelemetryFrame } from "./protocol";
import { isViolation } from "./state";

const VEHICLE_RADIUS = 0.3;

interface Transform {
  sx: (x: number) => number;
  sy: (y: number) => number;
  scale: number;
}

function fitWorld(scenario: ScenarioInfo, w: number, h: number): Transform {
  let minX = Infinity, minY = Infinity, maxX = -Infinity, maxY = -Infinity;
  for (const [x1, y1, x2, y2] of scenario.walls) {
    minX = Math.min(minX, x1, x2);
    maxX = Math.max(maxX, x1, x2);
    minY = Math.min(minY, y1, y2);
    maxY = Math.max(maxY, y1, y2);
  }
  const pad = 1.5;
  const scale = Math.min(
    w / (maxX - minX + 2 * pad),
    h / (maxY - minY + 2 * pad),
  );
  const ox = (w - (maxX - minX) * scale) / 2;
  const oy = (h + (maxY - minY) * scale) / 2;
  return {
    sx: (x) => ox + (x - minX) * scale,
    sy: (y) => oy - (y - minY) * scale, // canvas y grows downward
    scale,
  };
}

export function render(
  ctx: CanvasRenderingContext2D,
  w: number,
  h: number,
  scenario: ScenarioInfo | null,
  frame: TelemetryFrame | null,
  trail: Array<[number, number]>,
): void {
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, w, h);
  if (!scenario) {
    return;
  }
  const tf = fitWorld(scenario, w, h);

  ctx.strokeStyle = "#8fa3bf";
  ctx.lineWidth = 2;
  for (const [x1, y1, x2, y2] of scenario.walls) {
    ctx.beginPath();
    ctx.moveTo(tf.sx(x1), tf.sy(y1));
    ctx.lineTo(tf.sx(x2), tf.sy(y2));
    ctx.stroke();
  }

  if (trail.length > 1) {
    ctx.strokeStyle = "#3c6e4f";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(tf.sx(trail[0][0]), tf.sy(trail[0][1]));
    for (const [x, y] of trail) {
      ctx.lineTo(tf.sx(x), tf.sy(y));
    }
    ctx.stroke();
  }

  if (!frame) {
    return;
  }
  const px = tf.sx(frame.x);
  const py = tf.sy(frame.y);

  // decimated scan rays (body angles rotate with yaw; null = no return)
  ctx.strokeStyle = "rgba(120, 180, 255, 0.25)";
  ctx.lineWidth = 1;
  for (let i = 0; i < frame.scan_angles.length; i++) {
    const r = frame.scan_ranges[i];
    if (r === null) continue;
    const a = frame.yaw + frame.scan_angles[i];
    ctx.beginPath();
    ctx.moveTo(px, py);
    ctx.lineTo(tf.sx(frame.x + r * Math.cos(a)), tf.sy(frame.y + r * Math.sin(a)));
    ctx.stroke();
  }

  // safety ring, red when any surface distance is inside it
  ctx.strokeStyle = isViolation(frame, scenario.d_s) ? "#e05555" : "rgba(220, 200, 80, 0.8)";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ctx.arc(px, py, scenario.d_s * tf.scale, 0, 2 * Math.PI);
  ctx.stroke();

  // vehicle disc + heading
  ctx.fillStyle = frame.collision ? "#ff3333" : "#6fd08c";
  ctx.beginPath();
  ctx.arc(px, py, Math.max(VEHICLE_RADIUS * tf.scale, 3), 0, 2 * Math.PI);
  ctx.fill();
  ctx.strokeStyle = "#ffffff";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(px, py);
  ctx.lineTo(
    tf.sx(frame.x + 2.5 * VEHICLE_RADIUS * Math.cos(frame.yaw)),
    tf.sy(frame.y + 2.5 * VEHICLE_RADIUS * Math.sin(frame.yaw)),
  );
  ctx.stroke();
}
