// WebSocket wiring with auto-reconnect. One JSON object per message, same
// schema as the TCP NDJSON transport.

import { parseServerMessage, ServerMessage } from "./protocol";

export interface NetCallbacks {
  onMessage: (msg: ServerMessage) => void;
  onStatus: (connected: boolean) => void;
}

export class Connection {
  private ws: WebSocket | null = null;
  private closed = false;

  constructor(private readonly url: string, private readonly cb: NetCallbacks) {}

  open(): void {
    this.closed = false;
    this.dial();
  }

  private dial(): void {
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => this.cb.onStatus(true);
    ws.onmessage = (ev) => {
      const msg = parseServerMessage(String(ev.data));
      if (msg) {
        this.cb.onMessage(msg);
      }
    };
    ws.onclose = () => {
      this.cb.onStatus(false);
      if (!this.closed) {
        setTimeout(() => this.dial(), 1000);
      }
    };
    ws.onerror = () => ws.close();
  }

  send(msg: string): boolean {
    if (this.ws && this.ws.readyState === WebSocket.OPEN) {
      try {
        this.ws.send(msg);
        return true;
      } catch {
        return false;
      }
    }
    return false;
  }

  /** Send with one retry on failure; reports the outcome. */
  sendReliable(msg: string, log: (text: string) => void): void {
    if (this.send(msg)) {
      return;
    }
    setTimeout(() => {
      if (!this.send(msg)) {
        log(`send failed: ${msg}`);
      }
    }, 250);
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}

/** ws port is one above the NDJSON port; static assets sit one above that. */
export function defaultWsUrl(loc: Location): string {
  const qs = new URLSearchParams(loc.search);
  const override = qs.get("ws");
  if (override) {
    return override;
  }
  const port = Number(loc.port || "8702") - 1;
  return `ws://${loc.hostname || "127.0.0.1"}:${port}`;
}
