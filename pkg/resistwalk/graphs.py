"""Weighted graphs and the path, Vicsek, gasket and carpet families.

Vertex ids are dense integers. Generated graphs number their vertices in
construction order: the outer corners of the unit cell first, then every
new vertex in order of first appearance while walking the IFS copies in
their fixed order over the previous level's ordering.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import (
    DisconnectedGraph,
    EmptySet,
    GraphError,
    InvalidLevel,
    LevelTooLarge,
    NonpositiveWeight,
    RangeError,
    SelfLoop,
    UnknownVertex,
)

FAMILIES = ("path", "vicsek", "gasket", "carpet", "wired_carpet")

MAX_LEVELS = {"path": 10**6, "vicsek": 6, "gasket": 7, "carpet": 3, "wired_carpet": 3}
MIN_LEVELS = {"path": 1, "vicsek": 0, "gasket": 0, "carpet": 0, "wired_carpet": 1}

CARPET_BOUNDARY_RULE = "cells touching the outer boundary of [0,1]^2"

Edge = tuple[int, int, float]
Point = tuple[float, float]


@dataclass(frozen=True)
class WeightedGraph:
    """Immutable connected graph with symmetric positive conductances.

    ``edges`` holds each undirected edge once as ``(u, v, w)`` with ``u < v``,
    sorted. ``vertex_measure[x]`` is the sum of weights incident to ``x``.
    """

    vertices: tuple[int, ...]
    edges: tuple[Edge, ...]
    vertex_measure: tuple[float, ...]
    total_mass: float
    coords: tuple[Point | None, ...] | None = None
    meta: Mapping = field(default_factory=dict, compare=False, hash=False)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def mu(self) -> np.ndarray:
        values = np.asarray(self.vertex_measure, dtype=float)
        values.flags.writeable = False
        return values

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric conductance matrix."""
        if not self.edges:
            return sparse.csr_matrix((self.n, self.n))
        u, v, w = (np.asarray(col) for col in zip(*self.edges))
        rows = np.concatenate([u, v]).astype(np.int64)
        cols = np.concatenate([v, u]).astype(np.int64)
        data = np.concatenate([w, w]).astype(float)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def laplacian(self) -> sparse.csr_matrix:
        return (sparse.diags(self.mu) - self.adjacency).tocsr()

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    @property
    def family(self) -> str | None:
        return self.meta.get("family")

    @property
    def level(self) -> int | None:
        return self.meta.get("level")

    @property
    def label(self) -> str:
        if self.family is None:
            return f"graph(n={self.n},e={len(self.edges)})"
        return f"{self.family}({self.level})"

    def check_vertex(self, x) -> int:
        if isinstance(x, (bool, np.bool_)) or not isinstance(x, (int, np.integer)):
            raise UnknownVertex(f"vertex id must be an integer, got {x!r}")
        if not 0 <= int(x) < self.n:
            raise UnknownVertex(f"vertex {x} not in graph with {self.n} vertices")
        return int(x)

    def neighbors(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour ids of ``x`` and the matching conductances."""
        x = self.check_vertex(x)
        start, stop = self.adjacency.indptr[x], self.adjacency.indptr[x + 1]
        return self.adjacency.indices[start:stop], self.adjacency.data[start:stop]

    def edge_weight(self, u: int, v: int) -> float:
        u, v = self.check_vertex(u), self.check_vertex(v)
        return float(self.adjacency[u, v])

    def points(self) -> np.ndarray:
        """Planar coordinates as an ``(n, 2)`` array; missing points are NaN."""
        if self.coords is None:
            raise GraphError(f"{self.label} carries no coordinates")
        return np.array([p if p is not None else (np.nan, np.nan) for p in self.coords], dtype=float)


@dataclass(frozen=True)
class FamilySpec:
    family: str
    level: int
    weight: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise RangeError(f"unknown family '{self.family}'. Expected one of {', '.join(FAMILIES)}")
        if not isinstance(self.level, (int, np.integer)) or isinstance(self.level, bool):
            raise InvalidLevel(f"level must be an integer, got {self.level!r}")
        if self.level < MIN_LEVELS[self.family]:
            raise InvalidLevel(f"{self.family} needs level >= {MIN_LEVELS[self.family]}, got {self.level}")
        if not self.weight > 0 or not math.isfinite(self.weight):
            raise NonpositiveWeight(f"family weight must be positive and finite, got {self.weight!r}")


def build_graph(
    edge_list: Iterable[Sequence],
    *,
    n_vertices: int | None = None,
    coords: Sequence[Point | None] | None = None,
    meta: Mapping | None = None,
) -> WeightedGraph:
    """Validate an edge list and compute vertex measures and total mass.

    Repeated edges are parallel conductors and their weights add.
    """

    merged: dict[tuple[int, int], float] = {}
    top = -1
    for entry in edge_list:
        try:
            u, v, w = entry
        except (TypeError, ValueError) as exc:
            raise GraphError(f"edge must be a (u, v, weight) triple, got {entry!r}") from exc
        for endpoint in (u, v):
            if isinstance(endpoint, bool) or not isinstance(endpoint, (int, np.integer)) or endpoint < 0:
                raise UnknownVertex(f"vertex ids must be nonnegative integers, got {endpoint!r}")
        u, v, w = int(u), int(v), float(w)
        if u == v:
            raise SelfLoop(f"self-loop at vertex {u}")
        if not w > 0 or not math.isfinite(w):
            raise NonpositiveWeight(f"edge ({u}, {v}) has weight {w!r}")
        key = (u, v) if u < v else (v, u)
        merged[key] = merged.get(key, 0.0) + w
        top = max(top, u, v)

    n = top + 1 if n_vertices is None else int(n_vertices)
    if top >= n:
        raise UnknownVertex(f"edge endpoint {top} outside vertex range 0..{n - 1}")
    if n < 2:
        raise GraphError("a graph needs at least two vertices")
    if coords is not None and len(coords) != n:
        raise GraphError(f"got {len(coords)} coordinates for {n} vertices")

    edges = tuple((u, v, w) for (u, v), w in sorted(merged.items()))
    measure = [0.0] * n
    for u, v, w in edges:
        measure[u] += w
        measure[v] += w

    graph = WeightedGraph(
        vertices=tuple(range(n)),
        edges=edges,
        vertex_measure=tuple(measure),
        total_mass=float(sum(measure)),
        coords=None if coords is None else tuple(None if p is None else (float(p[0]), float(p[1])) for p in coords),
        meta=dict(meta or {}),
    )
    n_components, _ = csgraph.connected_components(graph.adjacency, directed=False)
    if n_components != 1:
        raise DisconnectedGraph(f"graph has {n_components} connected components")
    return graph


def _vertex_set(g: WeightedGraph, S: Iterable[int]) -> set[int]:
    members = {g.check_vertex(x) for x in S}
    if not members:
        raise EmptySet("vertex set is empty")
    return members


def wire_map(g: WeightedGraph, S: Iterable[int]) -> dict[int, int]:
    """Relabeling used by :func:`wire_vertices`.

    Vertices outside ``S`` keep their relative order; the merged vertex takes
    the position of ``min(S)``.
    """

    members = _vertex_set(g, S)
    representative = min(members)
    mapping: dict[int, int] = {}
    next_id = 0
    for v in g.vertices:
        if v in members and v != representative:
            continue
        mapping[v] = next_id
        next_id += 1
    for v in members:
        mapping[v] = mapping[representative]
    return mapping


def wire_vertices(g: WeightedGraph, S: Iterable[int]) -> WeightedGraph:
    """Identify the vertices of ``S``; parallel edges add, edges inside ``S`` vanish."""

    members = _vertex_set(g, S)
    mapping = wire_map(g, members)
    n_new = max(mapping.values()) + 1
    if n_new < 2:
        raise GraphError("wiring leaves fewer than two vertices")

    edges = [(mapping[u], mapping[v], w) for u, v, w in g.edges if not (u in members and v in members)]

    coords = None
    if g.coords is not None:
        coords = [None] * n_new
        for v, new in mapping.items():
            if v not in members or len(members) == 1:
                coords[new] = g.coords[v]

    meta = dict(g.meta)
    if len(members) > 1:
        meta.update({"wired": True, "wired_vertex": mapping[min(members)], "wired_size": len(members)})
        meta.pop("cells", None)
    return build_graph(edges, n_vertices=n_new, coords=coords, meta=meta)


def graph_distance(g: WeightedGraph, x: int, y: int) -> int:
    """Unweighted shortest-path length between ``x`` and ``y``."""

    x, y = g.check_vertex(x), g.check_vertex(y)
    if x == y:
        return 0
    dist = csgraph.shortest_path(g.adjacency, directed=False, unweighted=True, indices=x)
    return int(dist[y])


def hop_distance_matrix(g: WeightedGraph) -> np.ndarray:
    dist = csgraph.shortest_path(g.adjacency, directed=False, unweighted=True)
    return dist.astype(np.int64)


def boundary_vertices(g: WeightedGraph) -> list[int]:
    if "boundary" not in g.meta:
        raise GraphError(f"{g.label} has no recorded boundary")
    return list(g.meta["boundary"])


# Generators -----------------------------------------------------------------

_SQRT3_HALF = math.sqrt(3.0) / 2.0

# Gasket points use the lattice basis e1 = (1, 0), e2 = (1/2, sqrt(3)/2) so
# that every vertex has exact dyadic coordinates.
_GASKET_CORNERS = ((Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)), (Fraction(0), Fraction(1)))

_VICSEK_CORNERS = (
    (Fraction(0), Fraction(0)),
    (Fraction(1), Fraction(0)),
    (Fraction(1), Fraction(1)),
    (Fraction(0), Fraction(1)),
)
_VICSEK_OFFSETS = (
    (Fraction(0), Fraction(0)),
    (Fraction(2, 3), Fraction(0)),
    (Fraction(2, 3), Fraction(2, 3)),
    (Fraction(0), Fraction(2, 3)),
    (Fraction(1, 3), Fraction(1, 3)),
)

# Level-0 carpet cells walk the ring of the 3x3 grid counter-clockwise.
_CARPET_CELLS = ((0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1))


def _ifs_refine(points, edges, cells, maps, seeds):
    """Apply one IFS step, identifying images by exact coordinate equality."""

    index: dict = {}
    new_points: list = []

    def intern(q):
        if q not in index:
            index[q] = len(new_points)
            new_points.append(q)
        return index[q]

    for seed in seeds:
        intern(seed)
    new_edges: list[tuple[int, int]] = []
    new_cells: list[tuple[int, ...]] = []
    for ifs_map in maps:
        local = [intern(ifs_map(p)) for p in points]
        new_edges.extend((local[u], local[v]) for u, v in edges)
        new_cells.extend(tuple(local[c] for c in cell) for cell in cells)
    return new_points, new_edges, new_cells


def _gasket(level: int, weight: float) -> WeightedGraph:
    points = list(_GASKET_CORNERS)
    edges = [(0, 1), (0, 2), (1, 2)]
    cells = [(0, 1, 2)]
    maps = [
        (lambda p, c=corner: ((p[0] + c[0]) / 2, (p[1] + c[1]) / 2))
        for corner in _GASKET_CORNERS
    ]
    for _ in range(level):
        points, edges, cells = _ifs_refine(points, edges, cells, maps, _GASKET_CORNERS)
    coords = [(float(a + b / 2), float(b) * _SQRT3_HALF) for a, b in points]
    meta = {"family": "gasket", "level": level, "wired": False, "corners": [0, 1, 2], "cells": cells}
    return build_graph(((u, v, weight) for u, v in edges), n_vertices=len(points), coords=coords, meta=meta)


def _vicsek(level: int, weight: float) -> WeightedGraph:
    points = list(_VICSEK_CORNERS) + [(Fraction(1, 2), Fraction(1, 2))]
    edges = [(0, 4), (1, 4), (2, 4), (3, 4)]
    maps = [
        (lambda p, o=offset: (p[0] / 3 + o[0], p[1] / 3 + o[1]))
        for offset in _VICSEK_OFFSETS
    ]
    for _ in range(level):
        points, edges, _cells = _ifs_refine(points, edges, [], maps, _VICSEK_CORNERS)
    coords = [(float(a), float(b)) for a, b in points]
    meta = {"family": "vicsek", "level": level, "wired": False, "corners": [0, 1, 2, 3]}
    return build_graph(((u, v, weight) for u, v in edges), n_vertices=len(points), coords=coords, meta=meta)


def _carpet_cells(level: int) -> list[tuple[int, int]]:
    cells = list(_CARPET_CELLS)
    for i in range(1, level + 1):
        side = 3**i
        cells = [(c + ox * side, r + oy * side) for ox, oy in _CARPET_CELLS for c, r in cells]
    return cells


def _carpet(level: int, weight: float) -> WeightedGraph:
    cells = _carpet_cells(level)
    side = 3 ** (level + 1)
    index = {cell: i for i, cell in enumerate(cells)}
    edges = []
    for (c, r), i in index.items():
        for neighbour in ((c + 1, r), (c, r + 1)):
            j = index.get(neighbour)
            if j is not None:
                edges.append((i, j, weight))
    coords = [((c + 0.5) / side, (r + 0.5) / side) for c, r in cells]
    boundary = sorted(i for (c, r), i in index.items() if c in (0, side - 1) or r in (0, side - 1))
    meta = {
        "family": "carpet",
        "level": level,
        "wired": False,
        "boundary": boundary,
        "boundary_rule": CARPET_BOUNDARY_RULE,
        "cells_grid": [list(cell) for cell in cells],
    }
    return build_graph(edges, n_vertices=len(cells), coords=coords, meta=meta)


def _path(level: int, weight: float) -> WeightedGraph:
    edges = [(i, i + 1, weight) for i in range(level)]
    coords = [(i / level, 0.0) for i in range(level + 1)]
    meta = {"family": "path", "level": level, "wired": False}
    return build_graph(edges, n_vertices=level + 1, coords=coords, meta=meta)


def _wired_carpet(level: int, weight: float) -> WeightedGraph:
    carpet = _carpet(level, weight)
    wired = wire_vertices(carpet, carpet.meta["boundary"])
    meta = dict(wired.meta)
    meta.update({"family": "wired_carpet", "boundary": [meta["wired_vertex"]]})
    meta.pop("cells_grid", None)
    return WeightedGraph(
        vertices=wired.vertices,
        edges=wired.edges,
        vertex_measure=wired.vertex_measure,
        total_mass=wired.total_mass,
        coords=wired.coords,
        meta=meta,
    )


_GENERATORS = {
    "path": _path,
    "vicsek": _vicsek,
    "gasket": _gasket,
    "carpet": _carpet,
    "wired_carpet": _wired_carpet,
}


def generate(spec: FamilySpec, max_levels: Mapping[str, int] | None = None) -> WeightedGraph:
    caps = dict(MAX_LEVELS)
    caps.update(max_levels or {})
    if spec.level > caps[spec.family]:
        raise LevelTooLarge(f"{spec.family} level {spec.level} exceeds the configured maximum {caps[spec.family]}")

    started = time.perf_counter()
    graph = _GENERATORS[spec.family](int(spec.level), float(spec.weight))
    logging.info(
        "Generated %s level %s: %s vertices, %s edges in %.3fs",
        spec.family,
        spec.level,
        graph.n,
        len(graph.edges),
        time.perf_counter() - started,
    )
    return graph


def family_graph(family: str, level: int, weight: float = 1.0) -> WeightedGraph:
    return generate(FamilySpec(family, level, weight))
