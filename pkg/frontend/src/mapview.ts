import type { SnapshotBody } from "./protocol.js";
import { decodeSlice } from "./rle.js";

const COLORS = { unknown: "#20242c", free: "#e8e4da", occupied: "#3a3f4a" };
const AGENT_COLORS = ["#d9534f", "#428bca", "#5cb85c", "#f0ad4e", "#9b59b6"];

export function agentColor(id: number): string {
  return AGENT_COLORS[id % AGENT_COLORS.length];
}

/** Draw the merged-map slice with agent poses, goals, paths, beacons and
 * connectivity edges onto a canvas 2D context. Returns the pixel scale. */
export function renderMap(ctx: CanvasRenderingContext2D,
                          snapshot: SnapshotBody,
                          canvasW: number, canvasH: number,
                          selected: number | null): number {
  const { grid, nx, ny } = decodeSlice(snapshot.map_slice);
  const res = snapshot.resolution;
  const scale = Math.min(canvasW / nx, canvasH / ny);
  const toPx = (wx: number, wy: number): [number, number] =>
    [(wx / res) * scale, canvasH - (wy / res) * scale];

  ctx.fillStyle = COLORS.unknown;
  ctx.fillRect(0, 0, canvasW, canvasH);
  for (let i = 0; i < nx; i++) {
    for (let j = 0; j < ny; j++) {
      const v = grid[i * ny + j];
      if (v === 0) continue;
      ctx.fillStyle = v === 1 ? COLORS.free : COLORS.occupied;
      ctx.fillRect(i * scale, canvasH - (j + 1) * scale,
                   Math.ceil(scale), Math.ceil(scale));
    }
  }

  // connectivity edges between mesh nodes (agents, beacons, base at spawn)
  const nodePos = new Map<number, number[]>();
  for (const a of snapshot.agents) nodePos.set(a.id, a.pose);
  for (const b of snapshot.beacons) nodePos.set(b.id, b.position);
  ctx.strokeStyle = "rgba(120, 200, 120, 0.5)";
  ctx.lineWidth = 1;
  for (const [u, v] of snapshot.links) {
    const pu = nodePos.get(u);
    const pv = nodePos.get(v);
    if (!pu || !pv) continue;
    ctx.beginPath();
    ctx.moveTo(...toPx(pu[0], pu[1]));
    ctx.lineTo(...toPx(pv[0], pv[1]));
    ctx.stroke();
  }

  for (const b of snapshot.beacons) {
    const [x, y] = toPx(b.position[0], b.position[1]);
    ctx.fillStyle = "#7fd4ff";
    ctx.fillRect(x - 3, y - 3, 6, 6);
  }

  for (const a of snapshot.agents) {
    const color = agentColor(a.id);
    if (a.path.length > 1) {
      ctx.strokeStyle = color;
      ctx.lineWidth = a.id === selected ? 2.5 : 1.2;
      ctx.beginPath();
      ctx.moveTo(...toPx(a.path[0][0], a.path[0][1]));
      for (const w of a.path.slice(1)) ctx.lineTo(...toPx(w[0], w[1]));
      ctx.stroke();
    }
    if (a.goal) {
      const [gx, gy] = toPx(a.goal[0], a.goal[1]);
      ctx.strokeStyle = color;
      ctx.lineWidth = 1.5;
      ctx.strokeRect(gx - 4, gy - 4, 8, 8);
    }
    const [x, y] = toPx(a.pose[0], a.pose[1]);
    const psi = a.pose[3];
    ctx.fillStyle = color;
    ctx.beginPath();
    ctx.arc(x, y, a.id === selected ? 6 : 4.5, 0, 2 * Math.PI);
    ctx.fill();
    ctx.strokeStyle = "#ffffff";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(x, y);
    ctx.lineTo(x + 9 * Math.cos(psi), y - 9 * Math.sin(psi));
    ctx.stroke();
  }
  return scale;
}
