"""Simulated lossy, range-limited, priority-scheduled mesh transport.

Nodes exchange fragmented messages over links that exist while nodes are
within radio range and have been continuously up for the reconnect latency.
Fragments move hop-by-hop along shortest routes with strict priority
between classes (0 highest) and FIFO within a class; lost fragments consume
airtime and retransmit. Messages addressed to unreachable destinations are
parked (beacons and the base act as custody stores) and re-offered when the
topology changes. Everything is driven by tick(); determinism follows from
the seeded RNG and sorted iteration orders.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field

import numpy as np

BROADCAST = -1
N_CLASSES = 3
FRAGMENT_HEADER_BYTES = 32
MAX_MESSAGE_BYTES = 64 * 1024 * 1024


@dataclass
class LinkModel:
    comm_range: float = 50.0          # m
    bandwidth_bps: float = 20e6       # per directed link
    loss: float = 0.0                 # per-fragment loss probability
    reconnect_latency: float = 1.0    # s of continuous contact before usable
    mtu: int = 1400                   # payload bytes per fragment
    queue_cap_bytes: int = 64 * 1024 * 1024
    store_cap_bytes: int = 64 * 1024 * 1024


@dataclass
class Envelope:
    src: int
    dst: int
    topic: str
    priority: int
    msg_seq: int
    payload: bytes
    sent_at: float = 0.0

    def key(self) -> tuple[int, int]:
        return (self.src, self.msg_seq)


@dataclass
class Fragment:
    src: int
    dst: int
    msg_seq: int
    index: int
    total: int
    data: bytes
    topic: str
    priority: int
    sent_at: float
    custody: tuple[int, ...] = ()
    via: int | None = None            # one-hop custody transfer target

    @property
    def wire_bytes(self) -> int:
        return len(self.data) + FRAGMENT_HEADER_BYTES

    def key(self) -> tuple[int, int, int]:
        return (self.src, self.msg_seq, self.dst)


@dataclass
class _MsgRecord:
    envelope: Envelope
    state: str = "in_flight"          # in_flight | delivered | dropped
    delivered_at: float = -1.0


@dataclass
class TransportStats:
    offered: dict[str, int] = field(default_factory=dict)
    delivered: dict[str, int] = field(default_factory=dict)
    dropped: dict[str, int] = field(default_factory=dict)
    latencies: dict[str, list[float]] = field(default_factory=dict)
    reconnect_events: int = 0
    fragments_sent: int = 0
    fragments_lost: int = 0

    def add(self, table: dict, topic: str, n: int) -> None:
        table[topic] = table.get(topic, 0) + n

    def in_flight(self) -> dict[str, int]:
        out = {}
        for t in self.offered:
            out[t] = (self.offered.get(t, 0) - self.delivered.get(t, 0)
                      - self.dropped.get(t, 0))
        return out

    def totals(self) -> dict:
        return {
            "offered": sum(self.offered.values()),
            "delivered": sum(self.delivered.values()),
            "dropped": sum(self.dropped.values()),
            "reconnects": self.reconnect_events,
        }


class MeshNode:
    def __init__(self, node_id: int, kind: str, position=(0.0, 0.0, 0.0)):
        if kind not in ("robot", "beacon", "base"):
            raise ValueError(f"unknown node kind {kind!r}")
        self.id = int(node_id)
        self.kind = kind
        self.position = np.asarray(position, dtype=float)
        self.alive = True
        self.queues: list[deque[Fragment]] = [deque() for _ in range(N_CLASSES)]
        self.queued_bytes = 0
        self.parked: list[Fragment] = []
        self.parked_bytes = 0
        self.inbox: list[Envelope] = []
        self.reasm: dict[tuple, dict] = {}
        self.delivered_keys: set[tuple[int, int]] = set()
        self.known: set[int] = set()
        self.next_seq = 0

    def enqueue(self, frag: Fragment) -> None:
        self.queues[frag.priority].append(frag)
        self.queued_bytes += frag.wire_bytes

    def park(self, frag: Fragment) -> None:
        self.parked.append(frag)
        self.parked_bytes += frag.wire_bytes


class MeshNetwork:
    def __init__(self, link: LinkModel | None = None, seed: int = 0):
        self.link = link or LinkModel()
        self.rng = random.Random(seed)
        self.nodes: dict[int, MeshNode] = {}
        self.time = 0.0
        self.stats = TransportStats()
        self.registry: dict[tuple, _MsgRecord] = {}
        self._up_since: dict[tuple[int, int], float] = {}
        self._was_connected: set[tuple[int, int]] = set()
        self._routes: dict[int, dict[int, int]] = {}

    # -- topology ----------------------------------------------------------

    def add_node(self, node_id: int, kind: str, position=(0, 0, 0)) -> MeshNode:
        if node_id in self.nodes:
            raise ValueError(f"duplicate node id {node_id}")
        n = MeshNode(node_id, kind, position)
        self.nodes[node_id] = n
        return n

    def set_position(self, node_id: int, position) -> None:
        self.nodes[node_id].position = np.asarray(position, dtype=float)

    def _pairs(self):
        ids = sorted(self.nodes)
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                yield ids[a], ids[b]

    def _update_links(self) -> None:
        for a, b in self._pairs():
            na, nb = self.nodes[a], self.nodes[b]
            pair = (a, b)
            in_range = (na.alive and nb.alive
                        and float(np.linalg.norm(na.position - nb.position))
                        <= self.link.comm_range)
            if in_range:
                if pair not in self._up_since:
                    self._up_since[pair] = self.time
                    if pair in self._was_connected:
                        self.stats.reconnect_events += 1
                    self._was_connected.add(pair)
            else:
                self._up_since.pop(pair, None)

    def usable(self, a: int, b: int) -> bool:
        pair = (a, b) if a < b else (b, a)
        up = self._up_since.get(pair)
        return up is not None and (self.time - up) >= self.link.reconnect_latency

    def _rebuild_routes(self) -> None:
        """BFS next-hop table over usable links, per node."""
        ids = sorted(self.nodes)
        adj = {i: [j for j in ids if j != i and self.usable(i, j)]
               for i in ids}
        self._routes = {}
        for src in ids:
            next_hop: dict[int, int] = {}
            visited = {src}
            frontier = [(n, n) for n in adj[src]]
            for n, first in frontier:
                visited.add(n)
                next_hop[n] = first
            while frontier:
                nxt = []
                for n, first in frontier:
                    for m in adj[n]:
                        if m not in visited:
                            visited.add(m)
                            next_hop[m] = first
                            nxt.append((m, first))
                frontier = nxt
            self._routes[src] = next_hop
            node = self.nodes[src]
            node.known.update(next_hop.keys())

    def route_next_hop(self, src: int, dst: int) -> int | None:
        return self._routes.get(src, {}).get(dst)

    def reachable(self, src: int, dst: int) -> bool:
        return dst in self._routes.get(src, {})

    # -- sending -----------------------------------------------------------

    def _fragment(self, env: Envelope) -> list[Fragment]:
        payload = env.payload
        total = max(1, math.ceil(len(payload) / self.link.mtu))
        frags = []
        for i in range(total):
            chunk = payload[i * self.link.mtu:(i + 1) * self.link.mtu]
            frags.append(Fragment(src=env.src, dst=env.dst, msg_seq=env.msg_seq,
                                  index=i, total=total, data=chunk,
                                  topic=env.topic, priority=env.priority,
                                  sent_at=env.sent_at,
                                  custody=(env.src,)))
        return frags

    def send(self, node_id: int, dst: int, topic: str, payload: bytes,
             priority: int) -> list[Envelope]:
        """Fragment and enqueue a message. Broadcast expands to one unicast
        copy per known peer. Returns the accepted envelopes."""
        node = self.nodes[node_id]
        if not node.alive:
            raise ValueError(f"node {node_id} is not alive")
        if not (0 <= priority < N_CLASSES):
            raise ValueError(f"priority {priority} out of range")
        if len(payload) > MAX_MESSAGE_BYTES:
            raise ValueError("message exceeds the simulated 64 MB cap")
        if dst == BROADCAST:
            targets = sorted(node.known - {node_id})
        else:
            targets = [dst]
        sent = []
        for tgt in targets:
            env = Envelope(src=node_id, dst=tgt, topic=topic,
                           priority=priority, msg_seq=node.next_seq,
                           payload=payload, sent_at=self.time)
            node.next_seq += 1
            self.registry[(env.src, env.msg_seq, env.dst)] = _MsgRecord(env)
            self.stats.add(self.stats.offered, topic, len(payload))
            for frag in self._fragment(env):
                node.enqueue(frag)
            sent.append(env)
        self._enforce_queue_cap(node)
        return sent

    def store_and_forward(self, node_id: int, env: Envelope) -> None:
        """Park an envelope at a node for later relay (custody store)."""
        node = self.nodes[node_id]
        for frag in self._fragment(env):
            frag.custody = frag.custody + (node_id,)
            node.park(frag)
        self._enforce_store_cap(node)

    def _drop_message(self, node: MeshNode, key: tuple) -> int:
        """Remove every queued/parked fragment of one message at `node`."""
        rec = self.registry.get(key)
        freed = 0
        for q in node.queues:
            keep = deque()
            while q:
                f = q.popleft()
                if f.key() == key:
                    freed += f.wire_bytes
                    node.queued_bytes -= f.wire_bytes
                else:
                    keep.append(f)
            q.extend(keep)
        kept = []
        for f in node.parked:
            if f.key() == key:
                freed += f.wire_bytes
                node.parked_bytes -= f.wire_bytes
            else:
                kept.append(f)
        node.parked = kept
        if rec is not None and rec.state == "in_flight":
            rec.state = "dropped"
            self.stats.add(self.stats.dropped, rec.envelope.topic,
                           len(rec.envelope.payload))
        return freed

    def _enforce_queue_cap(self, node: MeshNode) -> None:
        while node.queued_bytes > self.link.queue_cap_bytes:
            victim = None
            for cls in range(N_CLASSES - 1, -1, -1):
                if node.queues[cls]:
                    victim = node.queues[cls][0].key()
                    break
            if victim is None:
                return
            if self._drop_message(node, victim) == 0:
                return

    def _enforce_store_cap(self, node: MeshNode) -> None:
        while node.parked_bytes > self.link.store_cap_bytes and node.parked:
            victim = None
            for cls in range(N_CLASSES - 1, -1, -1):
                for f in node.parked:
                    if f.priority == cls:
                        victim = f.key()
                        break
                if victim:
                    break
            if victim is None:
                return
            if self._drop_message(node, victim) == 0:
                return

    # -- ticking -----------------------------------------------------------

    def tick(self, dt: float) -> dict[int, list[Envelope]]:
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.time += dt
        self._update_links()
        self._rebuild_routes()
        self._reoffer_parked()

        budgets: dict[tuple[int, int], float] = {}
        arrivals: list[tuple[int, Fragment]] = []
        cap = self.link.bandwidth_bps * dt / 8.0

        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if not node.alive:
                continue
            blocked: set[int] = set()
            for cls in range(N_CLASSES):
                q = node.queues[cls]
                n_scan = len(q)
                for _ in range(n_scan):
                    frag = q.popleft()
                    hop = self.route_next_hop(nid, frag.dst)
                    if hop is None and frag.via is not None \
                            and self.usable(nid, frag.via):
                        hop = frag.via
                    if hop is None:
                        node.queued_bytes -= frag.wire_bytes
                        target = self._custody_target(node, frag)
                        if target is not None:
                            frag.via = target
                            node.enqueue(frag)
                        else:
                            node.park(frag)
                            self._enforce_store_cap(node)
                        continue
                    if hop in blocked:
                        q.append(frag)
                        continue
                    link = (nid, hop)
                    budget = budgets.get(link, cap)
                    if budget < frag.wire_bytes:
                        blocked.add(hop)
                        q.append(frag)
                        continue
                    budgets[link] = budget - frag.wire_bytes
                    self.stats.fragments_sent += 1
                    if self.rng.random() < self.link.loss:
                        # lost on air: keep at queue head for retransmission
                        self.stats.fragments_lost += 1
                        q.appendleft(frag)
                        continue
                    node.queued_bytes -= frag.wire_bytes
                    arrivals.append((hop, frag))

        delivered: dict[int, list[Envelope]] = {}
        for hop, frag in arrivals:
            self._receive(hop, frag, delivered)
        return delivered

    def _custody_target(self, node: MeshNode, frag: Fragment) -> int | None:
        """A connected store-capable node that has not yet held this
        fragment; robots shed custody toward beacons and the base."""
        if node.kind != "robot":
            return None
        for nid in sorted(self.nodes):
            other = self.nodes[nid]
            if other.kind in ("beacon", "base") and nid != node.id \
                    and nid not in frag.custody and self.usable(node.id, nid):
                return nid
        return None

    def _reoffer_parked(self) -> None:
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if not node.parked:
                continue
            keep = []
            for frag in node.parked:
                if self.reachable(nid, frag.dst):
                    node.parked_bytes -= frag.wire_bytes
                    frag.via = None
                    node.enqueue(frag)
                    continue
                target = self._custody_target(node, frag)
                if target is not None:
                    node.parked_bytes -= frag.wire_bytes
                    frag.via = target
                    node.enqueue(frag)
                else:
                    keep.append(frag)
            node.parked = keep

    def _receive(self, node_id: int, frag: Fragment,
                 delivered: dict[int, list[Envelope]]) -> None:
        node = self.nodes[node_id]
        frag = Fragment(src=frag.src, dst=frag.dst, msg_seq=frag.msg_seq,
                        index=frag.index, total=frag.total, data=frag.data,
                        topic=frag.topic, priority=frag.priority,
                        sent_at=frag.sent_at,
                        custody=frag.custody + (node_id,))
        node.known.add(frag.src)
        if node_id == frag.dst:
            key = (frag.src, frag.msg_seq)
            if key in node.delivered_keys:
                return
            r = node.reasm.setdefault(
                frag.key(), {"parts": {}, "total": frag.total})
            r["parts"][frag.index] = frag.data
            if len(r["parts"]) == frag.total:
                payload = b"".join(r["parts"][i] for i in range(frag.total))
                env = Envelope(src=frag.src, dst=frag.dst, topic=frag.topic,
                               priority=frag.priority, msg_seq=frag.msg_seq,
                               payload=payload, sent_at=frag.sent_at)
                node.delivered_keys.add(key)
                node.inbox.append(env)
                delivered.setdefault(node_id, []).append(env)
                del node.reasm[frag.key()]
                rec = self.registry.get(frag.key())
                if rec is not None and rec.state == "in_flight":
                    rec.state = "delivered"
                    rec.delivered_at = self.time
                    self.stats.add(self.stats.delivered, frag.topic,
                                   len(payload))
                    self.stats.latencies.setdefault(frag.topic, []).append(
                        self.time - frag.sent_at)
            return
        if self.reachable(node_id, frag.dst):
            node.enqueue(frag)
            self._enforce_queue_cap(node)
        else:
            node.park(frag)
            self._enforce_store_cap(node)

    # -- introspection ------------------------------------------------------

    def drain_inbox(self, node_id: int) -> list[Envelope]:
        node = self.nodes[node_id]
        out = node.inbox
        node.inbox = []
        return out

    def declare_known(self, node_id: int, peer: int) -> None:
        """Application-level discovery (e.g. a peer learned from a relayed
        status block)."""
        if peer in self.nodes and peer != node_id:
            self.nodes[node_id].known.add(peer)

    def conservation_ok(self) -> bool:
        """offered == delivered + dropped + in-flight, per topic."""
        per_topic_flight: dict[str, int] = {}
        for rec in self.registry.values():
            if rec.state == "in_flight":
                t = rec.envelope.topic
                per_topic_flight[t] = (per_topic_flight.get(t, 0)
                                       + len(rec.envelope.payload))
        for topic, offered in self.stats.offered.items():
            rhs = (self.stats.delivered.get(topic, 0)
                   + self.stats.dropped.get(topic, 0)
                   + per_topic_flight.get(topic, 0))
            if offered != rhs:
                return False
        return True
