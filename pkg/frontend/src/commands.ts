import { CommandFrame, CommandOp, makeCommand } from "./protocol.js";

/** Issues commands with client-side idempotence: an identical command is
 * not re-sent while its predecessor is still unacknowledged (double-click
 * safety), and every command carries a unique id for ack matching. */
export class CommandTracker {
  private counter = 0;
  private inflight = new Map<string, string>();  // fingerprint -> cmd_id

  constructor(private send: (frame: CommandFrame) => void) {}

  private fingerprint(op: CommandOp, target: number,
                      args: Record<string, unknown>): string {
    return `${op}|${target}|${JSON.stringify(args)}`;
  }

  issue(op: CommandOp, target: number,
        args: Record<string, unknown> = {}): string | null {
    const fp = this.fingerprint(op, target, args);
    if (this.inflight.has(fp)) {
      return null;  // duplicate while pending: swallowed
    }
    const cmdId = `c${this.counter++}`;
    this.inflight.set(fp, cmdId);
    this.send(makeCommand(op, target, args, cmdId));
    return cmdId;
  }

  settle(cmdId: string): void {
    for (const [fp, id] of this.inflight) {
      if (id === cmdId) {
        this.inflight.delete(fp);
        return;
      }
    }
  }

  pendingCount(): number {
    return this.inflight.size;
  }
}
