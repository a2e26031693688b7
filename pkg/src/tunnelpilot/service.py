"""Telemetry/command server for live operation.

Runs the simulation loop paced to wall clock and exposes the wire protocol:
newline-delimited JSON objects, one `type` field per message, over a plain
TCP socket (port), over WebSocket (port + 1) for browser clients, and a
static HTTP server (port + 2) for the operator console assets.

Telemetry is lossy per subscriber (frames are dropped when a client cannot
keep up); commands are applied through a mailbox before the next control
tick, so their latency is bounded by two ticks. The control loop never
blocks on the network.
"""

from __future__ import annotations

import json
import math
import queue
import socket
import threading
import time
from dataclasses import asdict, dataclass
from typing import Optional

from .config import ConfigError, ReferenceCommand
from .sim import (ControllerStack, RunLog, Scenario, SimulationLoop, TickRecord,
                  builtin_scenarios)

TELEMETRY_BEAMS = 90
QUEUE_DEPTH = 64


@dataclass(frozen=True)
class TelemetryFrame:
    """One control tick of live state, decimated for the wire."""

    type: str
    tick: int
    t: float
    x: float
    y: float
    yaw: float
    z: float
    vx: float
    vy: float
    vz: float
    phi: float
    theta: float
    d_xp: float
    d_xm: float
    d_yp: float
    d_ym: float
    d_zp: float
    psi_dot_r: float
    z_r: float
    vx_r: float
    vy_r: float
    solve_ms: float
    status: str
    collision: bool
    scan_angles: tuple
    scan_ranges: tuple


def telemetry_frame(tick: int, rec: TickRecord) -> TelemetryFrame:
    step = max(1, len(rec.scan.ranges) // TELEMETRY_BEAMS)
    angles = rec.scan.angles[::step]
    ranges = rec.scan.ranges[::step]
    d = rec.distances
    s = rec.state
    return TelemetryFrame(
        type="telemetry", tick=tick, t=rec.t, x=rec.x, y=rec.y, yaw=rec.yaw,
        z=s.z, vx=s.vx, vy=s.vy, vz=s.vz, phi=s.phi, theta=s.theta,
        d_xp=d.d_xp, d_xm=d.d_xm, d_yp=d.d_yp, d_ym=d.d_ym, d_zp=d.d_zp,
        psi_dot_r=rec.psi_dot_r, z_r=rec.reference.z_r,
        vx_r=rec.reference.vx_r, vy_r=rec.reference.vy_r,
        solve_ms=rec.solve_ms, status=rec.status, collision=bool(rec.collision),
        scan_angles=tuple(round(float(a), 4) for a in angles),
        scan_ranges=tuple(None if not math.isfinite(r) else round(float(r), 3)
                          for r in ranges),
    )


def frame_json(frame: TelemetryFrame) -> str:
    return json.dumps(asdict(frame), separators=(",", ":"))


class CommandError(Exception):
    """Malformed or invalid command message."""


def parse_command(line: str) -> dict:
    """Validate one wire message; returns the decoded command dict."""
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CommandError(f"invalid JSON: {exc}") from exc
    if not isinstance(msg, dict) or "type" not in msg:
        raise CommandError("message must be an object with a 'type' field")
    kind = msg["type"]
    if kind == "set_reference":
        try:
            ReferenceCommand(z_r=float(msg["z_r"]), vx_r=float(msg["vx_r"]),
                             vy_r=float(msg["vy_r"]))
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise CommandError(f"bad set_reference: {exc}") from exc
    elif kind == "reset":
        if "seed" in msg and not isinstance(msg["seed"], int):
            raise CommandError("reset seed must be an integer")
    elif kind not in ("return_command", "pause", "resume", "scenario_info"):
        raise CommandError(f"unknown command type {kind!r}")
    return msg


class TelemetryServer:
    """Drives the loop and serves the wire protocol on TCP + WebSocket."""

    def __init__(self, scenario: Scenario, stack: Optional[ControllerStack] = None,
                 seed: int = 0, port: int = 8700, rate: float = 1.0,
                 console_dir: Optional[str] = None,
                 scenarios: Optional[dict] = None):
        self.loop = SimulationLoop(scenario, stack=stack, seed=seed)
        self.scenarios = scenarios or builtin_scenarios()
        self.port = port
        self.rate = rate
        self.console_dir = console_dir
        self.log = RunLog(scenario=scenario.name, seed=seed)
        self._mailbox: list[dict] = []
        self._mailbox_lock = threading.Lock()
        self._subs: dict[int, queue.Queue] = {}
        self._subs_lock = threading.Lock()
        self._next_sub = 0
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._servers = []
        self.paused = False

    # -- loop ---------------------------------------------------------------

    def post_command(self, msg: dict) -> None:
        """Queue a validated command for the next tick (reliable path)."""
        with self._mailbox_lock:
            self._mailbox.append(msg)

    def _drain_mailbox(self) -> None:
        with self._mailbox_lock:
            pending, self._mailbox = self._mailbox, []
        for msg in pending:
            kind = msg["type"]
            if kind == "set_reference":
                self.loop.apply_command("set_reference", z_r=float(msg["z_r"]),
                                        vx_r=float(msg["vx_r"]), vy_r=float(msg["vy_r"]))
            elif kind == "return_command":
                self.loop.apply_command("return")
            elif kind == "pause":
                self.paused = True
            elif kind == "resume":
                self.paused = False
            elif kind == "reset":
                name = msg.get("scenario", self.loop.scenario.name)
                scenario = self.scenarios.get(name, self.loop.scenario)
                self.loop.reset(scenario=scenario, seed=msg.get("seed", self.loop.seed))
                self.log = RunLog(scenario=scenario.name, seed=self.loop.seed)

    def run_ticks(self, n: int) -> list[TelemetryFrame]:
        """Advance n ticks unpaced (deterministic path used by tests)."""
        frames = []
        for _ in range(n):
            self._drain_mailbox()
            if self.paused:
                continue
            rec = self.loop.tick()
            self.log.append(rec)
            frame = telemetry_frame(self.loop.tick_index - 1, rec)
            frames.append(frame)
            self._broadcast(frame_json(frame))
        return frames

    def _control_loop(self) -> None:
        from .sim import SimulationFault

        period = self.loop.ts / self.rate
        deadline = time.monotonic()
        while not self._stop.is_set():
            self._drain_mailbox()
            if not self.paused:
                try:
                    rec = self.loop.tick()
                except SimulationFault as exc:
                    self._broadcast(json.dumps(
                        {"type": "error", "message": f"simulation fault: {exc}"}))
                    self.paused = True
                    continue
                self.log.append(rec)
                self._broadcast(frame_json(telemetry_frame(self.loop.tick_index - 1, rec)))
            deadline += period
            delay = deadline - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            else:
                deadline = time.monotonic()

    # -- subscribers ----------------------------------------------------------

    def _subscribe(self) -> tuple[int, queue.Queue]:
        with self._subs_lock:
            sid = self._next_sub
            self._next_sub += 1
            q: queue.Queue = queue.Queue(maxsize=QUEUE_DEPTH)
            self._subs[sid] = q
        return sid, q

    def _unsubscribe(self, sid: int) -> None:
        with self._subs_lock:
            self._subs.pop(sid, None)

    def _broadcast(self, line: str) -> None:
        with self._subs_lock:
            subs = list(self._subs.values())
        for q in subs:
            while True:
                try:
                    q.put_nowait(line)
                    break
                except queue.Full:
                    # lossy telemetry: evict the oldest frame for this
                    # subscriber so slow clients keep seeing fresh state
                    try:
                        q.get_nowait()
                    except queue.Empty:
                        pass

    def _reply_for(self, raw: str) -> Optional[str]:
        """Handle one inbound line; returns an immediate reply or None."""
        try:
            msg = parse_command(raw)
        except CommandError as exc:
            return json.dumps({"type": "error", "message": str(exc)})
        if msg["type"] == "scenario_info":
            w = self.loop.scenario.world
            return json.dumps({
                "type": "scenario_info",
                "name": self.loop.scenario.name,
                "walls": w.segments.tolist(),
                "ceiling_height": w.ceiling_height,
                "spawn": list(w.spawn),
                "d_s": self.loop.stack.ctx.weights.d_s,
                "ts": self.loop.ts,
            })
        self.post_command(msg)
        return None

    # -- TCP ndjson ---------------------------------------------------------

    def _tcp_session(self, conn: socket.socket) -> None:
        sid, q = self._subscribe()
        conn.settimeout(0.2)
        buf = b""
        try:
            while not self._stop.is_set():
                try:
                    while True:
                        line = q.get_nowait()
                        conn.sendall(line.encode() + b"\n")
                except queue.Empty:
                    pass
                try:
                    chunk = conn.recv(65536)
                    if not chunk:
                        break
                    buf += chunk
                    while b"\n" in buf:
                        raw, buf = buf.split(b"\n", 1)
                        if raw.strip():
                            reply = self._reply_for(raw.decode("utf-8", "replace"))
                            if reply is not None:
                                conn.sendall(reply.encode() + b"\n")
                except socket.timeout:
                    continue
        except OSError:
            pass
        finally:
            self._unsubscribe(sid)
            conn.close()

    def _tcp_server(self) -> None:
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind(("0.0.0.0", self.port))
        srv.listen(8)
        srv.settimeout(0.2)
        self._servers.append(srv)
        while not self._stop.is_set():
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._tcp_session, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)
        srv.close()

    # -- WebSocket (same messages, one JSON object per WS message) -----------

    def _ws_server(self) -> None:
        try:
            from websockets.sync.server import serve
        except ImportError:
            return

        def handler(ws):
            sid, q = self._subscribe()

            def pump():
                try:
                    while not self._stop.is_set():
                        try:
                            ws.send(q.get(timeout=0.2))
                        except queue.Empty:
                            continue
                except Exception:
                    pass

            t = threading.Thread(target=pump, daemon=True)
            t.start()
            try:
                for raw in ws:
                    reply = self._reply_for(raw)
                    if reply is not None:
                        ws.send(reply)
            except Exception:
                pass
            finally:
                self._unsubscribe(sid)

        try:
            server = serve(handler, "0.0.0.0", self.port + 1)
        except OSError:
            return
        self._servers.append(server)

        def stopper():
            self._stop.wait()
            server.shutdown()

        threading.Thread(target=stopper, daemon=True).start()
        server.serve_forever()

    # -- static console assets ------------------------------------------------

    def _http_server(self) -> None:
        if not self.console_dir:
            return
        from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer

        directory = self.console_dir

        class Handler(SimpleHTTPRequestHandler):
            def __init__(self, *a, **kw):
                super().__init__(*a, directory=directory, **kw)

            def log_message(self, *a):
                pass

        try:
            httpd = ThreadingHTTPServer(("0.0.0.0", self.port + 2), Handler)
        except OSError:
            return
        self._servers.append(httpd)
        httpd.timeout = 0.2
        while not self._stop.is_set():
            httpd.handle_request()
        httpd.server_close()

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> None:
        for target in (self._control_loop, self._tcp_server, self._ws_server,
                       self._http_server):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2.0)

    def serve_forever(self) -> None:
        self.start()
        try:
            while True:
                time.sleep(0.5)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()
