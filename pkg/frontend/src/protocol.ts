// Wire protocol: newline-delimited JSON objects with a `type` discriminator,
// identical over the raw TCP port and the WebSocket mirror.

export interface TelemetryFrame {
  type: "telemetry";
  tick: number;
  t: number;
  x: number;
  y: number;
  yaw: number;
  z: number;
  vx: number;
  vy: number;
  vz: number;
  phi: number;
  theta: number;
  d_xp: number;
  d_xm: number;
  d_yp: number;
  d_ym: number;
  d_zp: number;
  psi_dot_r: number;
  z_r: number;
  vx_r: number;
  vy_r: number;
  solve_ms: number;
  status: string;
  collision: boolean;
  scan_angles: number[];
  scan_ranges: (number | null)[];
}

export interface ScenarioInfo {
  type: "scenario_info";
  name: string;
  walls: number[][]; // rows [x1, y1, x2, y2]
  ceiling_height: number;
  spawn: number[];
  d_s: number;
  ts: number;
}

export interface ErrorFrame {
  type: "error";
  message: string;
}

export type ServerMessage = TelemetryFrame | ScenarioInfo | ErrorFrame;

export const DISTANCE_KEYS = ["d_xp", "d_xm", "d_yp", "d_ym", "d_zp"] as const;
export type DistanceKey = (typeof DISTANCE_KEYS)[number];

export function parseServerMessage(line: string): ServerMessage | null {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null || !("type" in obj)) {
    return null;
  }
  const type = (obj as { type: unknown }).type;
  if (type === "telemetry" || type === "scenario_info" || type === "error") {
    return obj as ServerMessage;
  }
  return null;
}

export function setReferenceMessage(z_r: number, vx_r: number, vy_r: number): string {
  return JSON.stringify({ type: "set_reference", z_r, vx_r, vy_r });
}

export function returnCommandMessage(): string {
  return JSON.stringify({ type: "return_command" });
}

export function scenarioInfoRequest(): string {
  return JSON.stringify({ type: "scenario_info" });
}

export function resetMessage(scenario?: string, seed?: number): string {
  const msg: Record<string, unknown> = { type: "reset" };
  if (scenario !== undefined) msg.scenario = scenario;
  if (seed !== undefined) msg.seed = seed;
  return JSON.stringify(msg);
}

export function pauseMessage(): string {
  return JSON.stringify({ type: "pause" });
}

export function resumeMessage(): string {
  return JSON.stringify({ type: "resume" });
}
