"""Metric-topological planning for 2D tunnel worlds.

A blurred binary occupancy image is thinned to a one-pixel skeleton
(Zhang-Suen), vertices and edges are read off the skeleton by neighbor
counting, and the next edge to explore is the nearest one that ends at an
unexplored terminal, skipping edges a traversal failure has blacklisted.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


@dataclass
class BinaryImage:
    bits: np.ndarray          # bool, [ix, iy], True = free
    resolution: float         # meters per pixel

    @property
    def width(self) -> int:
        return self.bits.shape[0]

    @property
    def height(self) -> int:
        return self.bits.shape[1]


def image_from_grid(grid, z_index: int) -> BinaryImage:
    """Free-space slice of an occupancy grid at one z level."""
    return BinaryImage(bits=grid.free_mask()[:, :, z_index].copy(),
                       resolution=grid.resolution)


# ---------------------------------------------------------------------------
# thinning
# ---------------------------------------------------------------------------

def _neighbors8(img: np.ndarray):
    """P2..P9: N, NE, E, SE, S, SW, W, NW with north = +y."""
    p = np.pad(img, 1).astype(np.uint8)
    c = p[1:-1, 1:-1]
    n = p[1:-1, 2:]
    s = p[1:-1, :-2]
    e = p[2:, 1:-1]
    w = p[:-2, 1:-1]
    ne = p[2:, 2:]
    se = p[2:, :-2]
    sw = p[:-2, :-2]
    nw = p[:-2, 2:]
    del c
    return n, ne, e, se, s, sw, w, nw


def _thin_pass(img: np.ndarray, second: bool) -> np.ndarray:
    n, ne, e, se, s, sw, w, nw = _neighbors8(img)
    seq = [n, ne, e, se, s, sw, w, nw, n]
    b = sum(x.astype(np.int8) for x in seq[:-1])
    a = sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.int8)
            for i in range(8))
    cond = img & (b >= 2) & (b <= 6) & (a == 1)
    if not second:
        cond &= ((n * e * s) == 0) & ((e * s * w) == 0)
    else:
        cond &= ((n * e * w) == 0) & ((n * s * w) == 0)
    out = img.copy()
    out[cond] = False
    return out


def zhang_suen_thin(img: np.ndarray) -> np.ndarray:
    """Iterate the two subpasses to a fixed point."""
    cur = img.astype(bool).copy()
    while True:
        nxt = _thin_pass(cur, second=False)
        nxt = _thin_pass(nxt, second=True)
        if np.array_equal(nxt, cur):
            return cur
        cur = nxt


def skeletonize(img: BinaryImage, blur_sigma: float = 2.0) -> BinaryImage:
    """Gaussian-blur the free-space image, re-threshold at 0.5, and thin."""
    bits = img.bits.astype(float)
    if blur_sigma > 0:
        bits = ndimage.gaussian_filter(bits, sigma=blur_sigma)
    binary = bits >= 0.5
    if not binary.any():
        return BinaryImage(bits=np.zeros_like(img.bits), resolution=img.resolution)
    return BinaryImage(bits=zhang_suen_thin(binary), resolution=img.resolution)


# ---------------------------------------------------------------------------
# graph extraction
# ---------------------------------------------------------------------------

MULTI_EDGE = "multi_edge"
SINGLE_EDGE = "single_edge"
UNEXPLORED_END = "unexplored_end"


@dataclass
class Vertex:
    vid: int
    position: np.ndarray      # (2,) meters
    kind: str
    pixels: list[tuple[int, int]]


@dataclass
class Edge:
    eid: int
    u: int
    v: int
    pixels: list[tuple[int, int]]
    length: float             # meters
    explored: bool = False


@dataclass
class SkeletonGraph:
    vertices: list[Vertex] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)

    def incident(self, vid: int) -> list[Edge]:
        return [e for e in self.edges if e.u == vid or e.v == vid]

    def degree(self, vid: int) -> int:
        d = 0
        for e in self.edges:
            if e.u == vid:
                d += 1
            if e.v == vid:
                d += 1
        return d

    def to_adjacency(self) -> dict:
        """Adjacency-list export with world positions, for plots/bridge."""
        return {
            "vertices": [{"id": v.vid, "position": [round(float(p), 3)
                                                    for p in v.position],
                          "kind": v.kind} for v in self.vertices],
            "edges": [{"id": e.eid, "u": e.u, "v": e.v,
                       "length": round(float(e.length), 3),
                       "explored": e.explored} for e in self.edges],
        }


def _neighbor_count(skel: np.ndarray) -> np.ndarray:
    return ndimage.correlate(skel.astype(np.int8), np.ones((3, 3), np.int8),
                             mode="constant") - skel.astype(np.int8)


def cluster_branch_pixels(branch: np.ndarray) -> list[list[tuple[int, int]]]:
    """Union branch pixels within a 2-pixel (Chebyshev) radius into one
    vertex cluster each."""
    pix = [tuple(p) for p in map(tuple, np.argwhere(branch))]
    index = {p: i for i, p in enumerate(pix)}
    parent = list(range(len(pix)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for p in pix:
        for di in range(-2, 3):
            for dj in range(-2, 3):
                q = (p[0] + di, p[1] + dj)
                if q in index and q != p:
                    ra, rb = find(index[p]), find(index[q])
                    if ra != rb:
                        parent[rb] = ra
    clusters: dict[int, list[tuple[int, int]]] = {}
    for p in pix:
        clusters.setdefault(find(index[p]), []).append(p)
    return [sorted(c) for _, c in sorted(clusters.items())]


def extract_graph(skel: BinaryImage, frontier_mask: BinaryImage | None = None
                  ) -> SkeletonGraph:
    """Vertices from branch/terminal pixels, edges traced along the chains.

    Terminal pixels touching the frontier mask become unexplored ends.
    """
    bits = skel.bits
    res = skel.resolution
    counts = _neighbor_count(bits)
    branch = bits & (counts >= 3)
    terminal = bits & (counts == 1)

    g = SkeletonGraph()
    vertex_id = np.full(bits.shape, -1, dtype=np.int32)
    for pix in cluster_branch_pixels(branch):
        vid = len(g.vertices)
        pos = (np.array(pix, dtype=float).mean(axis=0) + 0.5) * res
        g.vertices.append(Vertex(vid=vid, position=pos, kind=MULTI_EDGE,
                                 pixels=pix))
        for p in pix:
            vertex_id[p] = vid

    fmask = None
    if frontier_mask is not None:
        fmask = ndimage.binary_dilation(frontier_mask.bits,
                                        np.ones((3, 3), bool))
    for p in (tuple(q) for q in np.argwhere(terminal)):
        if vertex_id[p] >= 0:
            continue
        vid = len(g.vertices)
        kind = SINGLE_EDGE
        if fmask is not None and fmask[p]:
            kind = UNEXPLORED_END
        pos = (np.array(p, dtype=float) + 0.5) * res
        g.vertices.append(Vertex(vid=vid, position=pos, kind=kind,
                                 pixels=[p]))
        vertex_id[p] = vid

    # trace chains between vertices
    assigned = vertex_id >= 0
    offs = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0),
            (1, 1)]

    def nbrs(p):
        for di, dj in offs:
            q = (p[0] + di, p[1] + dj)
            if 0 <= q[0] < bits.shape[0] and 0 <= q[1] < bits.shape[1] \
                    and bits[q]:
                yield q

    def chain_len(pixels) -> float:
        if len(pixels) < 2:
            return res
        d = np.diff(np.array(pixels, dtype=float), axis=0)
        return float(np.sum(np.hypot(d[:, 0], d[:, 1]))) * res

    def add_edge(u, v, pixels):
        g.edges.append(Edge(eid=len(g.edges), u=u, v=v, pixels=pixels,
                            length=max(chain_len(pixels), res)))

    for vtx in g.vertices:
        for vp in vtx.pixels:
            for start in nbrs(vp):
                if vertex_id[start] >= 0:
                    continue
                if assigned[start]:
                    continue
                chain = [vp, start]
                assigned[start] = True
                prev, cur = vp, start
                while True:
                    nxt = None
                    for q in nbrs(cur):
                        if q == prev or (q in vtx.pixels and len(chain) <= 2):
                            continue
                        if vertex_id[q] >= 0:
                            nxt = q
                            break
                        if not assigned[q]:
                            nxt = q
                            break
                    if nxt is None:
                        # chain dead-ends without reaching a vertex pixel
                        add_edge(vtx.vid, vtx.vid, chain)
                        break
                    chain.append(nxt)
                    if vertex_id[nxt] >= 0:
                        add_edge(vtx.vid, int(vertex_id[nxt]), chain)
                        break
                    assigned[nxt] = True
                    prev, cur = cur, nxt

    # direct vertex-vertex adjacencies with no chain pixels in between
    seen_pairs = {(e.u, e.v) for e in g.edges} | {(e.v, e.u) for e in g.edges}
    for vtx in g.vertices:
        for vp in vtx.pixels:
            for q in nbrs(vp):
                ov = int(vertex_id[q])
                if ov >= 0 and ov != vtx.vid and (vtx.vid, ov) not in seen_pairs:
                    add_edge(vtx.vid, ov, [vp, q])
                    seen_pairs.add((vtx.vid, ov))
                    seen_pairs.add((ov, vtx.vid))

    # isolated loops: anchor one pixel as a vertex carrying a self-loop
    remaining = bits & ~assigned
    loops, n_loops = ndimage.label(remaining, structure=np.ones((3, 3), np.int8))
    for lab in range(1, n_loops + 1):
        pix = [tuple(p) for p in sorted(map(tuple, np.argwhere(loops == lab)))]
        if not pix:
            continue
        anchor = pix[0]
        vid = len(g.vertices)
        pos = (np.array(anchor, dtype=float) + 0.5) * res
        g.vertices.append(Vertex(vid=vid, position=pos, kind=MULTI_EDGE,
                                 pixels=[anchor]))
        vertex_id[anchor] = vid
        for p in pix:
            assigned[p] = True
        add_edge(vid, vid, pix + [anchor])
    return g


# ---------------------------------------------------------------------------
# edge selection with a traversal-failure blacklist
# ---------------------------------------------------------------------------

@dataclass
class VisitLog:
    failed_edges: set[int] = field(default_factory=set)
    history: list[tuple[int, int]] = field(default_factory=list)

    def record_visit(self, vertex: int, edge: int) -> None:
        self.history.append((vertex, edge))

    def record_failure(self, edge: int) -> None:
        self.failed_edges.add(edge)


def select_next_edge(g: SkeletonGraph, current_vertex: int,
                     visit_log: VisitLog | None = None):
    """Edge reaching the nearest unexplored end by graph distance, excluding
    blacklisted edges. Returns None when exploration should head home."""
    failed = visit_log.failed_edges if visit_log else set()
    dist = {current_vertex: 0.0}
    first_edge: dict[int, Edge] = {}
    heap = [(0.0, current_vertex)]
    best: tuple[float, Edge] | None = None
    while heap:
        d, v = heapq.heappop(heap)
        if d > dist.get(v, math.inf):
            continue
        vert = g.vertices[v]
        if vert.kind == UNEXPLORED_END and v != current_vertex:
            edge = first_edge.get(v)
            if edge is not None and (best is None or d < best[0]):
                best = (d, edge)
            continue
        for e in g.edges:
            if e.eid in failed:
                continue
            if e.u == v:
                o = e.v
            elif e.v == v:
                o = e.u
            else:
                continue
            nd = d + e.length
            if nd < dist.get(o, math.inf) - 1e-12:
                dist[o] = nd
                first_edge[o] = first_edge.get(v, e) if v != current_vertex \
                    else e
                heapq.heappush(heap, (nd, o))
    return best[1] if best else None
