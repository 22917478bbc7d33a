import type { ServerFrame, SnapshotBody } from "./protocol.js";

export type CommandRecord = {
  cmdId: string;
  op: string;
  target: number;
  sentAt: number;
  status: "pending" | "acked" | "error";
  detail: string;
};

/** Client view state: the latest snapshot, its age, the selected agent,
 * and the command history. Every rendered element traces back to a
 * snapshot field; nothing is invented client-side. */
export class ViewState {
  snapshot: SnapshotBody | null = null;
  snapshotAtMs = 0;
  tick = -1;
  selectedAgent: number | null = null;
  sliceZ = 0;
  connected = false;
  history: CommandRecord[] = [];

  applyFrame(frame: ServerFrame, nowMs: number): void {
    if (frame.kind === "snapshot") {
      this.snapshot = frame.body;
      this.snapshotAtMs = nowMs;
      this.tick = frame.tick;
      this.sliceZ = frame.body.slice_z;
      if (this.selectedAgent === null && frame.body.agents.length > 0) {
        this.selectedAgent = frame.body.agents[0].id;
      }
    } else if (frame.kind === "ack" || frame.kind === "error") {
      const rec = this.history.find(h => h.cmdId === frame.body.cmd_id);
      if (rec) {
        rec.status = frame.kind === "ack" ? "acked" : "error";
        rec.detail = (frame.body as { status?: string; message?: string })
          .status ?? (frame.body as { message?: string }).message ?? "";
      }
    }
  }

  recordCommand(cmdId: string, op: string, target: number,
                nowMs: number): CommandRecord {
    const rec: CommandRecord = {
      cmdId, op, target, sentAt: nowMs, status: "pending", detail: "",
    };
    this.history.push(rec);
    return rec;
  }

  /** Seconds since the last snapshot arrived (staleness indicator). */
  stalenessS(nowMs: number): number {
    if (this.snapshot === null) return Infinity;
    return (nowMs - this.snapshotAtMs) / 1000;
  }

  isStale(nowMs: number, thresholdS = 5): boolean {
    return this.stalenessS(nowMs) > thresholdS;
  }

  pendingArtifacts(): number {
    if (!this.snapshot) return 0;
    return this.snapshot.artifacts.filter(a => a.status === "pending").length;
  }

  agent(id: number | null) {
    if (!this.snapshot || id === null) return null;
    return this.snapshot.agents.find(a => a.id === id) ?? null;
  }
}
