import { Connection, defaultWsUrl } from "./net";
import {
  DISTANCE_KEYS,
  returnCommandMessage,
  pauseMessage,
  resumeMessage,
  resetMessage,
  scenarioInfoRequest,
  setReferenceMessage,
} from "./protocol";
import { render } from "./render";
import {
  clampReference,
  CommandRateLimiter,
  ConsoleState,
  violatedChannels,
} from "./state";

const state = new ConsoleState();
const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx2d = canvas.getContext("2d")!;
const banner = document.getElementById("banner")!;
const eventLog = document.getElementById("events")!;
const readouts = document.getElementById("readouts")!;

const sliders = {
  z_r: document.getElementById("z_r") as HTMLInputElement,
  vx_r: document.getElementById("vx_r") as HTMLInputElement,
  vy_r: document.getElementById("vy_r") as HTMLInputElement,
};
const sliderLabels = {
  z_r: document.getElementById("z_r_val")!,
  vx_r: document.getElementById("vx_r_val")!,
  vy_r: document.getElementById("vy_r_val")!,
};

const conn = new Connection(defaultWsUrl(window.location), {
  onMessage: (msg) => {
    if (msg.type === "telemetry") {
      state.pushFrame(msg, Date.now());
    } else if (msg.type === "scenario_info") {
      state.scenario = msg;
      state.logEvent(`scenario: ${msg.name}`);
    } else if (msg.type === "error") {
      state.logEvent(`server error: ${msg.message}`);
    }
  },
  onStatus: (connected) => {
    state.connected = connected;
    state.logEvent(connected ? "connected" : "disconnected");
    if (connected) {
      conn.sendReliable(scenarioInfoRequest(), (t) => state.logEvent(t));
    }
  },
});

const limiter = new CommandRateLimiter((msg) => {
  conn.sendReliable(msg, (t) => state.logEvent(t));
});

function sendReferences(): void {
  const refs = clampReference(
    Number(sliders.z_r.value),
    Number(sliders.vx_r.value),
    Number(sliders.vy_r.value),
  );
  sliderLabels.z_r.textContent = refs.z_r.toFixed(2);
  sliderLabels.vx_r.textContent = refs.vx_r.toFixed(2);
  sliderLabels.vy_r.textContent = refs.vy_r.toFixed(2);
  limiter.submit(setReferenceMessage(refs.z_r, refs.vx_r, refs.vy_r));
}

for (const el of Object.values(sliders)) {
  el.addEventListener("input", sendReferences);
}

document.getElementById("return")!.addEventListener("click", () => {
  conn.sendReliable(returnCommandMessage(), (t) => state.logEvent(t));
  state.logEvent("return command sent");
});
document.getElementById("pause")!.addEventListener("click", () => {
  conn.sendReliable(pauseMessage(), (t) => state.logEvent(t));
});
document.getElementById("resume")!.addEventListener("click", () => {
  conn.sendReliable(resumeMessage(), (t) => state.logEvent(t));
});
document.getElementById("reset")!.addEventListener("click", () => {
  conn.sendReliable(resetMessage(), (t) => state.logEvent(t));
  state.trail = [];
});

function fmt(v: number): string {
  return v.toFixed(2);
}

function refreshPanel(): void {
  const f = state.latest;
  const d_s = state.scenario?.d_s ?? 1.0;
  if (!f) {
    readouts.innerHTML = "<em>waiting for telemetry…</em>";
    return;
  }
  const violated = new Set(violatedChannels(f, d_s));
  const cells = DISTANCE_KEYS.map((k) => {
    const cls = violated.has(k) ? "violation" : "";
    return `<div class="cell ${cls}"><span>${k}</span><b>${fmt(f[k])} m</b></div>`;
  }).join("");
  readouts.innerHTML = `
    ${cells}
    <div class="cell"><span>z</span><b>${fmt(f.z)} m</b></div>
    <div class="cell"><span>refs</span><b>z ${fmt(f.z_r)} / vx ${fmt(f.vx_r)} / vy ${fmt(f.vy_r)}</b></div>
    <div class="cell"><span>yaw rate cmd</span><b>${f.psi_dot_r.toFixed(3)} rad/s</b></div>
    <div class="cell"><span>solve</span><b>${f.solve_ms.toFixed(1)} ms (${f.status})</b></div>
    <div class="cell ${f.collision ? "violation" : ""}"><span>collision</span><b>${f.collision}</b></div>`;
}

function refreshEvents(): void {
  eventLog.textContent = state.events.slice(-12).join("\n");
}

function frameLoop(): void {
  const stale = state.isStale(Date.now());
  banner.style.display = stale || !state.connected ? "block" : "none";
  banner.textContent = state.connected ? "telemetry stale" : "disconnected";
  render(ctx2d, canvas.width, canvas.height, state.scenario, state.latest,
         state.trail);
  refreshPanel();
  refreshEvents();
  requestAnimationFrame(frameLoop);
}

conn.open();
requestAnimationFrame(frameLoop);
