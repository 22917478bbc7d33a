/** Wire schema shared with the supervisor bridge (schema_version 1).
 *
 * Every frame is a JSON text message: server -> client frames carry
 * {kind, schema_version, tick, body}; client -> server commands carry
 * {kind: "command", cmd_id, body: {op, target, args}}.
 */

export const SCHEMA_VERSION = 1;

export type AgentSnapshot = {
  id: number;
  kind: string;
  pose: number[];
  mode: string;
  goal: number[] | null;
  manual_goal: number[] | null;
  path: number[][];
  battery: number;
  beacons_carried: number;
  merged_layers: number[];
};

export type ArtifactRow = {
  id: string;
  agent: number;
  type: string;
  position: number[];
  confidence: number;
  status: string;
};

export type MapSlice = { rows: number[][][]; width: number };

export type SnapshotBody = {
  time_s: number;
  world_dims: number[];
  resolution: number;
  agents: AgentSnapshot[];
  beacons: { id: number; position: number[] }[];
  links: number[][];
  coverage: number;
  score: number;
  artifacts: ArtifactRow[];
  map_slice: MapSlice;
  slice_z: number;
};

export type ServerFrame =
  | { kind: "snapshot"; schema_version: number; tick: number; body: SnapshotBody }
  | { kind: "ack"; schema_version: number; tick: number; body: { cmd_id: string; status: string } }
  | { kind: "error"; schema_version: number; tick: number; body: { cmd_id?: string; status?: string; message?: string } }
  | { kind: "session"; schema_version: number; tick: number; body: { commands: unknown[]; score: number } };

export type CommandOp =
  | "estop" | "resume" | "goto" | "return_home" | "deploy_beacon"
  | "reset_map" | "submit" | "reject" | "edit";

export type CommandFrame = {
  kind: "command";
  cmd_id: string;
  body: { op: CommandOp; target: number; args: Record<string, unknown> };
};

export class ProtocolError extends Error {}

export function parseServerFrame(raw: string): ServerFrame {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new ProtocolError("frame is not JSON");
  }
  const f = data as Record<string, unknown>;
  if (typeof f !== "object" || f === null) {
    throw new ProtocolError("frame is not an object");
  }
  if (f["schema_version"] !== SCHEMA_VERSION) {
    throw new ProtocolError(`unsupported schema_version ${f["schema_version"]}`);
  }
  const kind = f["kind"];
  if (kind !== "snapshot" && kind !== "ack" && kind !== "error"
      && kind !== "session") {
    throw new ProtocolError(`unknown frame kind ${String(kind)}`);
  }
  if (typeof f["tick"] !== "number" || typeof f["body"] !== "object") {
    throw new ProtocolError("frame missing tick/body");
  }
  return data as ServerFrame;
}

export function makeCommand(op: CommandOp, target: number,
                            args: Record<string, unknown>,
                            cmdId: string): CommandFrame {
  return { kind: "command", cmd_id: cmdId, body: { op, target, args } };
}

/** Map-canvas pixel to world coordinates at the current slice. */
export function pixelToWorld(px: number, py: number, scale: number,
                             resolution: number, sliceZ: number,
                             height: number): number[] {
  const i = px / scale;
  const j = (height - py) / scale;
  return [i * resolution, j * resolution, (sliceZ + 0.5) * resolution];
}
