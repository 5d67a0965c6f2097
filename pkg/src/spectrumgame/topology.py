"""Random small-cell deployments and their interference graphs.

A deployment is a set of access points dropped uniformly at random in a
square region, each with an integer channel demand (its load). Two access
points interfere when they are closer than the interference distance, which
induces an undirected interference graph. Everything downstream (the game,
the learning dynamics) only ever sees this graph and the loads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TOPOLOGY_FORMAT_HEADER = "spectrumgame-topology v1"


class TopologyError(ValueError):
    """Invalid topology parameters or a malformed/inconsistent topology file."""


def compute_edges(positions: np.ndarray, interference_distance: float) -> frozenset:
    """All unordered pairs (i, j), i < j, strictly closer than the threshold."""
    n = positions.shape[0]
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    ii, jj = np.nonzero(dist < interference_distance)
    return frozenset((int(i), int(j)) for i, j in zip(ii, jj) if i < j)


@dataclass(frozen=True, eq=False)
class NetworkTopology:
    """Immutable deployment: positions, per-cell loads, interference edges.

    The edge set is stored explicitly but must agree exactly with the
    distance rule; construction fails otherwise. Safe to share read-only
    across concurrent trials.
    """

    positions: np.ndarray              # (n, 2) float64, metres
    loads: tuple                       # per-SAP channel demand, ints >= 1
    region_side: float                 # metres
    interference_distance: float       # metres
    edges: frozenset                   # pairs (i, j) with i < j

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise TopologyError(f"positions must be a nonempty (n, 2) array, got shape {pos.shape}")
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        n = pos.shape[0]
        loads = tuple(int(k) for k in self.loads)
        if len(loads) != n:
            raise TopologyError(f"{len(loads)} loads for {n} cells")
        if any(k < 1 for k in loads):
            raise TopologyError("every load must be a positive integer")
        object.__setattr__(self, "loads", loads)
        if not (self.region_side > 0):
            raise TopologyError("region_side must be positive")
        if not (self.interference_distance > 0):
            raise TopologyError("interference_distance must be positive")

        expected = compute_edges(pos, self.interference_distance)
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        if any(not (0 <= i < j < n) for i, j in edges):
            raise TopologyError("edge endpoints out of range or not ordered i < j")
        if edges != expected:
            raise TopologyError(
                "edge set inconsistent with positions and interference distance "
                f"({len(edges - expected)} spurious, {len(expected - edges)} missing)"
            )
        object.__setattr__(self, "edges", edges)

        adjacency = [[] for _ in range(n)]
        for i, j in sorted(edges):
            adjacency[i].append(j)
            adjacency[j].append(i)
        object.__setattr__(self, "_neighbor_sets", tuple(tuple(sorted(a)) for a in adjacency))

    @property
    def n_cells(self) -> int:
        return self.positions.shape[0]

    def neighbors(self, n: int) -> tuple:
        """Indices of all cells within interference distance of cell ``n``."""
        if not 0 <= n < self.n_cells:
            raise IndexError(f"cell index {n} out of range [0, {self.n_cells})")
        return self._neighbor_sets[n]

    def degree(self, n: int) -> int:
        return len(self.neighbors(n))

    def mean_degree(self) -> float:
        return 2.0 * len(self.edges) / self.n_cells


def neighbors(topology: NetworkTopology, n: int) -> tuple:
    """Neighbor set of cell ``n`` in the interference graph."""
    return topology.neighbors(n)


def generate_topology(
    n_cells: int,
    load_set: Sequence[int],
    base_region: float,
    base_cells: int,
    d0: float,
    rng_seed,
) -> NetworkTopology:
    """Drop ``n_cells`` access points uniformly in a density-preserving square.

    The square side scales as base_region * sqrt(n_cells / base_cells), so a
    deployment with more cells keeps the same spatial density as the base
    one. Loads are drawn i.i.d. uniform from ``load_set``. Deterministic for
    a fixed seed.
    """
    if n_cells < 1:
        raise TopologyError("n_cells must be >= 1")
    load_set = tuple(int(k) for k in load_set)
    if not load_set:
        raise TopologyError("load_set must be nonempty")
    if any(k < 1 for k in load_set):
        raise TopologyError("load_set entries must be positive integers")
    if not (base_region > 0 and base_cells >= 1):
        raise TopologyError("base_region must be positive and base_cells >= 1")
    if not (d0 > 0):
        raise TopologyError("interference distance d0 must be positive")

    side = base_region * math.sqrt(n_cells / base_cells)
    rng = np.random.default_rng(rng_seed)
    positions = rng.uniform(0.0, side, size=(n_cells, 2))
    loads = tuple(load_set[i] for i in rng.integers(len(load_set), size=n_cells))
    edges = compute_edges(positions, d0)
    return NetworkTopology(
        positions=positions,
        loads=loads,
        region_side=side,
        interference_distance=d0,
        edges=edges,
    )


def save_topology(topology: NetworkTopology, path, comment: str = None) -> None:
    """Write a topology file (versioned text format, bit-exact round trip).

    Layout: header line, optional '#' comment lines, ``region_side`` and
    ``interference_distance`` (floats via repr), ``cells <n>``, one
    ``sap <i> <x> <y> <load>`` line per cell in index order, ``edges <m>``,
    one ``edge <i> <j>`` line per edge (i < j, sorted), then ``end``.
    """
    lines = [TOPOLOGY_FORMAT_HEADER]
    if comment:
        for row in comment.splitlines():
            lines.append(f"# {row}")
    lines.append(f"region_side {topology.region_side!r}")
    lines.append(f"interference_distance {topology.interference_distance!r}")
    lines.append(f"cells {topology.n_cells}")
    for i in range(topology.n_cells):
        x, y = topology.positions[i]
        lines.append(f"sap {i} {float(x)!r} {float(y)!r} {topology.loads[i]}")
    edges = sorted(topology.edges)
    lines.append(f"edges {len(edges)}")
    for i, j in edges:
        lines.append(f"edge {i} {j}")
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_topology(path) -> NetworkTopology:
    """Parse a topology file; raises TopologyError on any malformation.

    The stored edge list is validated against the distance rule recomputed
    from the stored positions, so a file whose edges disagree with its own
    geometry is rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = [line.rstrip("\n") for line in fh]
    lines = [line for line in raw if line.strip() and not line.lstrip().startswith("#")]
    if not lines or lines[0] != TOPOLOGY_FORMAT_HEADER:
        raise TopologyError(f"missing or unsupported header (expected {TOPOLOGY_FORMAT_HEADER!r})")

    def expect(idx, key, n_fields):
        if idx >= len(lines):
            raise TopologyError(f"unexpected end of file, expected {key!r}")
        fields = lines[idx].split()
        if fields[0] != key or len(fields) != n_fields:
            raise TopologyError(f"line {idx + 1}: expected {key!r} with {n_fields - 1} values, got {lines[idx]!r}")
        return fields[1:]

    try:
        (side,) = expect(1, "region_side", 2)
        (d0,) = expect(2, "interference_distance", 2)
        (count,) = expect(3, "cells", 2)
        side, d0, count = float(side), float(d0), int(count)
        if count < 1:
            raise TopologyError("cells count must be >= 1")
        positions = np.empty((count, 2))
        loads = []
        for k in range(count):
            i, x, y, load = expect(4 + k, "sap", 5)
            if int(i) != k:
                raise TopologyError(f"sap lines out of order: expected index {k}, got {i}")
            positions[k] = (float(x), float(y))
            loads.append(int(load))
        at = 4 + count
        (n_edges,) = expect(at, "edges", 2)
        edges = set()
        for k in range(int(n_edges)):
            i, j = (int(v) for v in expect(at + 1 + k, "edge", 3))
            edges.add((i, j))
        expect(at + 1 + int(n_edges), "end", 1)
        if len(lines) != at + 2 + int(n_edges):
            raise TopologyError("trailing content after end line")
    except (ValueError, IndexError) as exc:
        if isinstance(exc, TopologyError):
            raise
        raise TopologyError(f"malformed topology file: {exc}") from exc

    return NetworkTopology(
        positions=positions,
        loads=tuple(loads),
        region_side=side,
        interference_distance=d0,
        edges=frozenset(edges),
    )
