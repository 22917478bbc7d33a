/** Supervisor console entry point: connects to the bridge WebSocket,
 * renders snapshots, and wires the command controls. */

import { CommandTracker } from "./commands.js";
import { renderMap, agentColor } from "./mapview.js";
import { parseServerFrame, pixelToWorld, ProtocolError } from "./protocol.js";
import { ViewState } from "./state.js";

const state = new ViewState();
let ws: WebSocket | null = null;
let tracker: CommandTracker | null = null;
let mapScale = 1;

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

function connect(): void {
  const url = `ws://${location.host}/ws`;
  ws = new WebSocket(url);
  tracker = new CommandTracker(frame => ws?.send(JSON.stringify(frame)));
  ws.onopen = () => {
    state.connected = true;
    render();
  };
  ws.onmessage = ev => {
    try {
      const frame = parseServerFrame(String(ev.data));
      state.applyFrame(frame, Date.now());
      if ((frame.kind === "ack" || frame.kind === "error")
          && frame.body.cmd_id) {
        tracker?.settle(String(frame.body.cmd_id));
      }
    } catch (e) {
      if (!(e instanceof ProtocolError)) throw e;
      console.warn(e.message);
    }
    render();
  };
  ws.onclose = () => {
    state.connected = false;
    render();
    setTimeout(connect, 1500);  // reconnect banner stays up meanwhile
  };
}

function issue(op: Parameters<CommandTracker["issue"]>[0],
               target: number, args: Record<string, unknown> = {}): void {
  const cmdId = tracker?.issue(op, target, args);
  if (cmdId) {
    state.recordCommand(cmdId, op, target, Date.now());
  }
  render();
}

function render(): void {
  const banner = $("banner");
  const stale = state.isStale(Date.now());
  if (!state.connected) {
    banner.textContent = "connection lost - reconnecting (showing last snapshot)";
    banner.className = "banner error";
  } else if (stale && state.snapshot) {
    banner.textContent =
      `snapshot stale: ${state.stalenessS(Date.now()).toFixed(0)} s old`;
    banner.className = "banner warn";
  } else {
    banner.textContent = "";
    banner.className = "banner";
  }
  const snap = state.snapshot;
  if (!snap) return;

  $("status").textContent =
    `t=${snap.time_s.toFixed(1)}s  coverage=${(snap.coverage * 100).toFixed(1)}%` +
    `  score=${snap.score}  pending artifacts=${state.pendingArtifacts()}`;

  const canvas = $("map") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (ctx) {
    mapScale = renderMap(ctx, snap, canvas.width, canvas.height,
                         state.selectedAgent);
  }

  // agent list and detail panel
  const list = $("agents");
  list.innerHTML = "";
  for (const a of snap.agents) {
    const row = document.createElement("div");
    row.className = "agent-row" + (a.id === state.selectedAgent
      ? " selected" : "");
    row.style.borderLeft = `6px solid ${agentColor(a.id)}`;
    row.textContent =
      `#${a.id} ${a.kind}  mode=${a.mode}  ` +
      `pos=(${a.pose[0].toFixed(1)}, ${a.pose[1].toFixed(1)})  ` +
      `battery=${(a.battery * 100).toFixed(0)}%  beacons=${a.beacons_carried}`;
    row.onclick = () => { state.selectedAgent = a.id; render(); };
    list.appendChild(row);
  }

  // artifact approval queue with position/type editors
  const queue = $("artifacts");
  queue.innerHTML = "";
  for (const art of snap.artifacts) {
    const row = document.createElement("div");
    row.className = "artifact-row";
    const label = document.createElement("span");
    label.textContent = `${art.id} ${art.type} @ ` +
      `(${art.position[0].toFixed(1)}, ${art.position[1].toFixed(1)}) ` +
      `conf=${art.confidence.toFixed(2)} [${art.status}]`;
    row.appendChild(label);
    if (art.status === "pending") {
      const typeSel = document.createElement("select");
      for (const t of ["survivor", "backpack", "phone", "drill",
                       "extinguisher"]) {
        const opt = document.createElement("option");
        opt.value = t;
        opt.textContent = t;
        opt.selected = t === art.type;
        typeSel.appendChild(opt);
      }
      const approve = document.createElement("button");
      approve.textContent = "approve";
      approve.onclick = () => {
        if (typeSel.value !== art.type) {
          issue("edit", 0, { id: art.id, type: typeSel.value });
        }
        issue("submit", 0, { id: art.id });
      };
      const reject = document.createElement("button");
      reject.textContent = "reject";
      reject.onclick = () => issue("reject", 0, { id: art.id });
      row.appendChild(typeSel);
      row.appendChild(approve);
      row.appendChild(reject);
    }
    queue.appendChild(row);
  }

  // command history
  const hist = $("history");
  hist.innerHTML = "";
  for (const h of state.history.slice(-8).reverse()) {
    const row = document.createElement("div");
    row.textContent =
      `${h.op} -> #${h.target}: ${h.status}${h.detail ? ` (${h.detail})` : ""}`;
    hist.appendChild(row);
  }
}

function wireControls(): void {
  $("btn-estop").onclick = () => {
    if (state.selectedAgent !== null) issue("estop", state.selectedAgent);
  };
  $("btn-estop-all").onclick = () => {
    for (const a of state.snapshot?.agents ?? []) issue("estop", a.id);
  };
  $("btn-resume").onclick = () => {
    if (state.selectedAgent !== null) issue("resume", state.selectedAgent);
  };
  $("btn-home").onclick = () => {
    if (state.selectedAgent !== null) issue("return_home",
                                            state.selectedAgent);
  };
  $("btn-beacon").onclick = () => {
    if (state.selectedAgent !== null) issue("deploy_beacon",
                                            state.selectedAgent);
  };
  $("btn-reset-map").onclick = () => {
    const raw = prompt("reset which agent's map layer?");
    if (raw && state.selectedAgent !== null) {
      issue("reset_map", state.selectedAgent, { agent: Number(raw) });
    }
  };
  const canvas = $("map") as HTMLCanvasElement;
  canvas.onclick = ev => {
    const snap = state.snapshot;
    if (!snap || state.selectedAgent === null) return;
    const rect = canvas.getBoundingClientRect();
    const pos = pixelToWorld(ev.clientX - rect.left, ev.clientY - rect.top,
                             mapScale, snap.resolution, snap.slice_z,
                             canvas.height);
    issue("goto", state.selectedAgent,
          { position: [pos[0], pos[1], pos[2]] });
  };
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", () => {
    wireControls();
    connect();
    setInterval(render, 1000);  // keep the staleness indicator live
  });
}
