// Console-side state: latest frame, bounded trajectory trail, event log,
// staleness tracking, violation logic, and the outgoing command rate limit.

import {
  DISTANCE_KEYS,
  DistanceKey,
  ScenarioInfo,
  TelemetryFrame,
} from "./protocol";

export const TRAIL_LIMIT = 1200;
export const EVENT_LOG_LIMIT = 200;
export const STALE_AFTER_MS = 1000;

// Slider bounds enforced before anything reaches the wire.
export const Z_REF_RANGE: [number, number] = [0.5, 3.0];
export const V_REF_RANGE: [number, number] = [-2.0, 2.0];

export function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi);
}

export function clampReference(z_r: number, vx_r: number, vy_r: number) {
  return {
    z_r: clamp(z_r, Z_REF_RANGE[0], Z_REF_RANGE[1]),
    vx_r: clamp(vx_r, V_REF_RANGE[0], V_REF_RANGE[1]),
    vy_r: clamp(vy_r, V_REF_RANGE[0], V_REF_RANGE[1]),
  };
}

export function violatedChannels(frame: TelemetryFrame, d_s: number): DistanceKey[] {
  return DISTANCE_KEYS.filter((k) => frame[k] < d_s);
}

export function isViolation(frame: TelemetryFrame, d_s: number): boolean {
  return violatedChannels(frame, d_s).length > 0;
}

export class ConsoleState {
  connected = false;
  scenario: ScenarioInfo | null = null;
  latest: TelemetryFrame | null = null;
  trail: Array<[number, number]> = [];
  events: string[] = [];
  lastFrameAt = 0;

  pushFrame(frame: TelemetryFrame, nowMs: number): void {
    this.latest = frame;
    this.lastFrameAt = nowMs;
    this.trail.push([frame.x, frame.y]);
    if (this.trail.length > TRAIL_LIMIT) {
      this.trail.splice(0, this.trail.length - TRAIL_LIMIT);
    }
  }

  logEvent(text: string): void {
    this.events.push(text);
    if (this.events.length > EVENT_LOG_LIMIT) {
      this.events.splice(0, this.events.length - EVENT_LOG_LIMIT);
    }
  }

  isStale(nowMs: number): boolean {
    return this.connected && this.lastFrameAt > 0
      && nowMs - this.lastFrameAt > STALE_AFTER_MS;
  }
}

/**
 * Trailing-edge rate limiter for slider commands: at most one message per
 * interval, and the last pending value is always flushed.
 */
export class CommandRateLimiter {
  private lastSentAt = -Infinity;
  private pending: string | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly send: (msg: string) => void,
    private readonly minIntervalMs = 100,
    private readonly now: () => number = () => Date.now(),
  ) {}

  submit(msg: string): void {
    const t = this.now();
    if (t - this.lastSentAt >= this.minIntervalMs) {
      this.lastSentAt = t;
      this.send(msg);
      return;
    }
    this.pending = msg;
    if (this.timer === null) {
      const wait = this.minIntervalMs - (t - this.lastSentAt);
      this.timer = setTimeout(() => this.flush(), wait);
    }
  }

  flush(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    if (this.pending !== null) {
      this.lastSentAt = this.now();
      this.send(this.pending);
      this.pending = null;
    }
  }
}
