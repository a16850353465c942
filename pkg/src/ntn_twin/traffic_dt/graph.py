"""Per-slot constellation graphs with intra-plane (a) and inter-plane (e) link sets."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .. import orbital
from ..errors import FileFormatError, InvariantViolation

log = logging.getLogger(__name__)

RAAN_TOL = 2.0  # deg
INC_TOL = 0.5  # deg
EDGE_TYPES = ("a", "e")


@dataclass
class ConstellationGraph:
    """Directed edge list (both directions of every link present); type 0 = intra-plane, 1 = inter-plane."""

    sat_ids: np.ndarray
    plane: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray
    slot: int = 0

    def __post_init__(self):
        n = len(self.sat_ids)
        self.src = np.asarray(self.src, dtype=np.intp)
        self.dst = np.asarray(self.dst, dtype=np.intp)
        self.etype = np.asarray(self.etype, dtype=np.intp)
        if len(self.src) and (self.src.min() < 0 or self.dst.min() < 0 or max(self.src.max(), self.dst.max()) >= n):
            raise InvariantViolation("edge references a missing node")
        if np.any(self.src == self.dst):
            raise InvariantViolation("self-loop in constellation graph")

    @property
    def n_nodes(self):
        return len(self.sat_ids)

    def edge_set(self, kind: str):
        t = EDGE_TYPES.index(kind)
        sel = self.etype == t
        return set(zip(self.src[sel].tolist(), self.dst[sel].tolist()))

    def neighbors(self, node: int, kind: str):
        t = EDGE_TYPES.index(kind)
        return sorted(self.src[(self.dst == node) & (self.etype == t)].tolist())


def cluster_planes(incs, nodes, raan_tol=RAAN_TOL, inc_tol=INC_TOL):
    """Greedy plane labels: a satellite joins the first plane whose seed member is within tolerance.

    Labels are then renumbered in order of increasing node longitude.
    """
    seeds, labels = [], np.empty(len(incs), dtype=int)
    for i, (inc, node) in enumerate(zip(incs, nodes)):
        for p, (si, sn) in enumerate(seeds):
            dn = abs((node - sn + 180.0) % 360.0 - 180.0)
            if dn < raan_tol and abs(inc - si) < inc_tol:
                labels[i] = p
                break
        else:
            seeds.append((inc, node))
            labels[i] = len(seeds) - 1
    order = np.argsort([sn for _, sn in seeds], kind="stable")
    remap = np.empty(len(seeds), dtype=int)
    remap[order] = np.arange(len(seeds))
    return remap[labels], np.array([seeds[k][1] for k in order])


def _symmetrize(pairs):
    s = set()
    for i, j in pairs:
        if i != j:
            s.add((i, j))
            s.add((j, i))
    return sorted(s)


def build_graph(positions, velocities, sat_ids=None, mode: str = "plane", k: int = 4, slot: int = 0,
                plane=None) -> ConstellationGraph:
    """Graph for one slot from ECEF states (N, 3).  ``plane`` overrides clustering when given."""
    pos = np.asarray(positions, dtype=float)
    vel = np.asarray(velocities, dtype=float)
    n = len(pos)
    if n < 2:
        raise ValueError("a constellation graph needs at least two satellites")
    sat_ids = np.arange(n) if sat_ids is None else np.asarray(sat_ids)
    if plane is None:
        elems = [orbital.plane_elements(p, v) for p, v in zip(pos, vel)]
        plane, _ = cluster_planes([e[0] for e in elems], [e[1] for e in elems])
    else:
        plane = np.asarray(plane)
    n_planes = int(plane.max()) + 1

    if mode == "plane":
        u = np.array([orbital.argument_of_latitude(p, v) for p, v in zip(pos, vel)])
        intra = []
        members = [np.flatnonzero(plane == q) for q in range(n_planes)]
        for mem in members:
            ring = mem[np.argsort(u[mem], kind="stable")]
            if len(ring) >= 2:
                intra.extend((ring[i], ring[(i + 1) % len(ring)]) for i in range(len(ring)))
        inter = []
        if n_planes < 2:
            log.info("single-plane constellation: no inter-plane links")
        else:
            for q, mem in enumerate(members):
                for q2 in {(q - 1) % n_planes, (q + 1) % n_planes} - {q}:
                    other = members[q2]
                    for i in mem:
                        d = np.linalg.norm(pos[other] - pos[i], axis=1)
                        inter.append((i, other[int(np.argmin(d))]))
        a_edges = _symmetrize(intra)
        e_edges = _symmetrize(inter)
        edges = [(i, j, 0) for i, j in a_edges] + [(i, j, 1) for i, j in e_edges]
    elif mode == "knn":
        lat, lon, _ = orbital.ecef_to_geodetic(pos)
        unit = np.stack([np.cos(np.radians(lat)) * np.cos(np.radians(lon)),
                         np.cos(np.radians(lat)) * np.sin(np.radians(lon)),
                         np.sin(np.radians(lat))], axis=-1)
        d = np.linalg.norm(unit[:, None] - unit[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        kk = min(k, n - 1)
        nbr = np.argsort(d, axis=1, kind="stable")[:, :kk]
        pairs = [(i, int(j)) for i in range(n) for j in nbr[i]]
        edges = [(i, j, 0 if plane[i] == plane[j] else 1) for i, j in _symmetrize(pairs)]
    else:
        raise ValueError(f"unknown graph mode {mode!r}")

    if edges:
        src, dst, et = (np.array(x) for x in zip(*edges))
    else:
        src = dst = et = np.zeros(0, dtype=np.intp)
    g = ConstellationGraph(sat_ids, np.asarray(plane), src, dst, et, slot)
    if g.edge_set("a") & g.edge_set("e"):
        raise InvariantViolation("intra- and inter-plane edge sets overlap")
    return g


def write_graph_csv(path, g: ConstellationGraph) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "type"])
        for s, d, t in zip(g.src, g.dst, g.etype):
            w.writerow([int(g.sat_ids[s]), int(g.sat_ids[d]), EDGE_TYPES[t]])


def read_graph_csv(path, sat_ids, plane, slot=0) -> ConstellationGraph:
    index = {int(s): i for i, s in enumerate(sat_ids)}
    src, dst, et = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["src", "dst", "type"]:
            raise FileFormatError(f"{path}: expected header src,dst,type")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3 or row[2] not in EDGE_TYPES:
                raise FileFormatError(f"{path}:{lineno}: malformed edge row {row}")
            try:
                src.append(index[int(row[0])])
                dst.append(index[int(row[1])])
            except (KeyError, ValueError) as exc:
                raise FileFormatError(f"{path}:{lineno}: unknown satellite in {row}") from exc
            et.append(EDGE_TYPES.index(row[2]))
    return ConstellationGraph(np.asarray(sat_ids), np.asarray(plane), src, dst, et, slot)
