"""Communication heights on a sampled grid.

A path's cost is the largest node value along it; the communication height
between two node sets is the cheapest such path, found with a Dijkstra search
that relaxes with ``max`` instead of ``+``.
"""
from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from ..errors import InputError, OracleMismatchError, UnreachableError
from .basins import CriticalPointSet
from .potentials import PotentialSpec

logger = logging.getLogger(__name__)

FORM_TOL = 1e-9


@dataclass(frozen=True)
class GridGraph:
    bounds: tuple[tuple[float, float], ...]
    resolution: int
    values: np.ndarray = field(repr=False)
    diagonal: bool = False
    _offsets: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        k = len(self.bounds)
        if self.resolution < 3:
            raise InputError(f"grid resolution must be >= 3 per axis, got {self.resolution}")
        if self.values.shape != (self.resolution,) * k:
            raise InputError(f"grid values have shape {self.values.shape}, expected {(self.resolution,) * k}")
        if not np.all(np.isfinite(self.values)):
            raise InputError("grid values must be finite at every node")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise InputError(f"grid bounds must satisfy lo < hi, got ({lo}, {hi})")
        if self.diagonal:
            offs = [o for o in itertools.product((-1, 0, 1), repeat=k) if any(o)]
        else:
            offs = []
            for axis in range(k):
                for s in (-1, 1):
                    o = [0] * k
                    o[axis] = s
                    offs.append(tuple(o))
        object.__setattr__(self, "_offsets", tuple(offs))

    @property
    def dimension(self) -> int:
        return len(self.bounds)

    @property
    def size(self) -> int:
        return int(self.values.size)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, self.resolution) for lo, hi in self.bounds]

    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (self.resolution - 1) for lo, hi in self.bounds])

    def position(self, node: int) -> np.ndarray:
        idx = np.unravel_index(node, self.values.shape)
        return np.array([ax[i] for ax, i in zip(self.axes(), idx)])

    def nearest_node(self, point: Any) -> int:
        p = np.asarray(point, dtype=float).reshape(-1)
        if p.size != self.dimension:
            raise InputError(f"point has length {p.size}, grid dimension is {self.dimension}")
        lo = np.array([b[0] for b in self.bounds])
        idx = np.clip(np.rint((p - lo) / self.spacing()).astype(int), 0, self.resolution - 1)
        return int(np.ravel_multi_index(tuple(idx), self.values.shape))

    def neighbors(self, node: int) -> Iterator[int]:
        res = self.resolution
        coords = []
        rem = node
        for _ in range(self.dimension):
            rem, c = divmod(rem, res)
            coords.append(c)
        coords.reverse()
        for off in self._offsets:
            nxt = 0
            for c, o in zip(coords, off):
                v = c + o
                if v < 0 or v >= res:
                    break
                nxt = nxt * res + v
            else:
                yield nxt


def build_grid(
    spec: PotentialSpec,
    bounds: Sequence[tuple[float, float]],
    resolution: int,
    diagonal: bool = False,
    *,
    chunk: int = 65_536,
) -> GridGraph:
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
    if len(bounds) != spec.dimension:
        raise InputError(f"{len(bounds)} axis bounds given for a {spec.dimension}-dimensional potential")
    if resolution < 3:
        raise InputError(f"grid resolution must be >= 3 per axis, got {resolution}")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(bounds))
    values = np.empty(mesh.shape[0])
    for start in range(0, mesh.shape[0], chunk):
        values[start : start + chunk] = spec.value(mesh[start : start + chunk])
    logger.debug("grid of %d nodes built", values.size)
    return GridGraph(bounds=bounds, resolution=resolution, values=values.reshape((resolution,) * len(bounds)), diagonal=diagonal)


def _as_nodes(grid: GridGraph, nodes: Iterable[int], name: str) -> set[int]:
    out = {int(n) for n in nodes}
    if not out:
        raise InputError(f"node set {name} is empty")
    bad = [n for n in out if not 0 <= n < grid.size]
    if bad:
        raise InputError(f"node set {name} has out-of-range nodes {sorted(bad)[:5]}")
    return out


def communication_height_grid(grid: GridGraph, a: Iterable[int], b: Iterable[int]) -> float:
    """Minimax path value between node sets a and b."""
    src = _as_nodes(grid, a, "A")
    dst = _as_nodes(grid, b, "B")
    if src & dst:
        raise InputError("node sets A and B must be disjoint")
    flat = grid.values.reshape(-1)
    best = np.full(grid.size, np.inf)
    heap: list[tuple[float, int]] = []
    for s in src:
        best[s] = flat[s]
        heapq.heappush(heap, (float(flat[s]), s))
    while heap:
        cost, node = heapq.heappop(heap)
        if cost > best[node]:
            continue
        if node in dst:
            return cost
        for nxt in grid.neighbors(node):
            c = max(cost, float(flat[nxt]))
            if c < best[nxt]:
                best[nxt] = c
                heapq.heappush(heap, (c, nxt))
    raise UnreachableError("no grid path joins the two node sets")


def minima_nodes(grid: GridGraph, minima: CriticalPointSet) -> list[int]:
    nodes = [grid.nearest_node(m.position) for m in minima.minima]
    if len(set(nodes)) != len(nodes):
        raise InputError("two minima fall on the same grid node; refine the grid")
    return nodes


def essential_barrier_height_forms(grid: GridGraph, minima: CriticalPointSet) -> tuple[float, float]:
    """Barrier from every minimum to the global one, and from every minimum to the set of lower ones."""
    minima.check_order()
    if len(minima.minima) < 2:
        logger.info("single minimum: essential barrier height is 0")
        return 0.0, 0.0
    flat = grid.values.reshape(-1)
    # order by sampled value so near-ties between symmetric minima follow the grid
    nodes = sorted(minima_nodes(grid, minima), key=lambda n: flat[n])
    to_global = max(
        communication_height_grid(grid, [nodes[i]], [nodes[0]]) - flat[nodes[i]] for i in range(1, len(nodes))
    )
    to_lower = max(
        communication_height_grid(grid, [nodes[i]], nodes[:i]) - flat[nodes[i]] for i in range(1, len(nodes))
    )
    return float(to_global), float(to_lower)


def essential_barrier_height_grid(grid: GridGraph, minima: CriticalPointSet, tol: float = FORM_TOL) -> float:
    to_global, to_lower = essential_barrier_height_forms(grid, minima)
    if abs(to_global - to_lower) > tol:
        raise OracleMismatchError(
            f"barrier characterisations disagree: {to_global:.9g} (to global) vs {to_lower:.9g} (to lower minima)"
        )
    return to_global
