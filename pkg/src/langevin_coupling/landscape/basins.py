from __future__ import annotations

import functools
import itertools
import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.optimize

from ..errors import DivergenceError, InputError
from .potentials import AnnLoss, DoubleWell1D, InteractingParticles, LehmerQuadratic, PotentialSpec, Rosenbrock

logger = logging.getLogger(__name__)

# coordinate threshold of the particle-system basin criterion
IPS_THRESHOLD = 0.11


@dataclass(frozen=True)
class DescentConfig:
    """Explicit Euler on the negative gradient flow.

    ``capture_radius`` > 0 stops a row early once it is that close to a known
    minimum; 0 means run to ``tol``.
    """

    step: float = 1.0e-3
    tol: float = 1.0e-8
    max_iter: int = 1_000_000
    capture_radius: float = 0.0

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise InputError(f"descent step must be > 0, got {self.step}")
        if not self.tol > 0:
            raise InputError(f"descent tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise InputError(f"descent max_iter must be >= 1, got {self.max_iter}")
        if self.capture_radius < 0:
            raise InputError(f"capture_radius must be >= 0, got {self.capture_radius}")


@dataclass(frozen=True)
class CriticalPoint:
    position: np.ndarray
    value: float


@dataclass(frozen=True)
class CriticalPointSet:
    """Minima sorted by value (label i is ``minima[i - 1]``, label 1 the global minimum)."""

    minima: tuple[CriticalPoint, ...]
    saddles: tuple[CriticalPoint, ...] = ()

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(range(1, len(self.minima) + 1))

    def positions(self) -> np.ndarray:
        return np.stack([m.position for m in self.minima])

    def values(self) -> np.ndarray:
        return np.array([m.value for m in self.minima])

    def check_order(self) -> None:
        vals = self.values()
        if np.any(np.diff(vals) < 0):
            raise InputError(f"minima must be labelled by increasing value, got values {vals.tolist()}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "minima": [{"position": m.position.tolist(), "value": m.value} for m in self.minima],
            "saddles": [{"position": s.position.tolist(), "value": s.value} for s in self.saddles],
        }


def finite_difference_hessian(spec: PotentialSpec, x: Any, step: float = 1.0e-5) -> np.ndarray:
    """Central differences of the analytic gradient, symmetrised."""
    x = np.asarray(x, dtype=float).reshape(-1)
    k = x.size
    hess = np.empty((k, k))
    for j in range(k):
        dx = np.zeros(k)
        dx[j] = step * (1.0 + abs(x[j]))
        hess[:, j] = (spec.gradient(x + dx) - spec.gradient(x - dx)) / (2.0 * dx[j])
    return 0.5 * (hess + hess.T)


def find_critical_points_1d(
    spec: PotentialSpec,
    bounds: tuple[float, float] = (-3.0, 3.0),
    samples: int = 6001,
) -> CriticalPointSet:
    """Roots of U' by bisection on a bracketing grid, split into minima and maxima by the sign of U''."""
    if spec.dimension != 1:
        raise InputError(f"find_critical_points_1d needs a one-dimensional potential, got dimension {spec.dimension}")

    def slope(t: float) -> float:
        return float(spec.gradient(np.array([t]))[0])

    xs = np.linspace(bounds[0], bounds[1], samples)
    gs = spec.gradient(xs[:, None])[:, 0]
    minima: list[CriticalPoint] = []
    maxima: list[CriticalPoint] = []
    for i in np.flatnonzero((gs[:-1] * gs[1:] < 0) | (gs[:-1] == 0.0)):
        root = xs[i] if gs[i] == 0.0 else scipy.optimize.bisect(slope, xs[i], xs[i + 1], xtol=1e-14)
        pos = np.array([root])
        point = CriticalPoint(position=pos, value=float(spec.value(pos)))
        if finite_difference_hessian(spec, pos)[0, 0] > 0:
            minima.append(point)
        else:
            maxima.append(point)
    minima.sort(key=lambda p: p.value)
    logger.debug("critical points: %d minima, %d maxima", len(minima), len(maxima))
    return CriticalPointSet(minima=tuple(minima), saddles=tuple(sorted(maxima, key=lambda p: p.position[0])))


def descend_points(
    spec: PotentialSpec,
    points: np.ndarray,
    descent: DescentConfig,
    targets: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run every row of ``points`` down the gradient flow. Returns (final points, converged mask)."""
    z = np.array(points, dtype=float, copy=True)
    if z.ndim == 1:
        z = z[None, :]
    active = np.ones(z.shape[0], dtype=bool)
    done = np.zeros(z.shape[0], dtype=bool)
    capture = descent.capture_radius > 0 and targets is not None
    for _ in range(descent.max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        g = spec.gradient(z[idx])
        small = np.linalg.norm(g, axis=1) < descent.tol
        if capture:
            dist = np.linalg.norm(z[idx, None, :] - targets[None, :, :], axis=2).min(axis=1)
            small |= dist < descent.capture_radius
        done[idx[small]] = True
        active[idx[small]] = False
        move = idx[~small]
        z[move] -= descent.step * g[~small]
        if not np.all(np.isfinite(z[move])):
            bad = move[~np.all(np.isfinite(z[move]), axis=1)]
            active[bad] = False
    return z, done


@functools.lru_cache(maxsize=32)
def reference_minima(spec: PotentialSpec, descent: DescentConfig = DescentConfig()) -> CriticalPointSet:
    """The labelled minima used to name basins."""
    if isinstance(spec, DoubleWell1D):
        return find_critical_points_1d(spec)
    if isinstance(spec, LehmerQuadratic):
        origin = np.zeros(spec.dimension)
        return CriticalPointSet(minima=(CriticalPoint(position=origin, value=0.0),))
    if isinstance(spec, InteractingParticles):
        starts = np.array(list(itertools.product((-1.0, 1.0), repeat=spec.dimension)))
    elif isinstance(spec, Rosenbrock):
        rows = [np.full(spec.dimension, spec.a)]
        if spec.dimension >= 4:
            rows.append(np.concatenate([[-1.0], np.ones(spec.dimension - 1)]))
        starts = np.array(rows)
    elif isinstance(spec, AnnLoss):
        raise InputError("ann_loss has no reference minima; basin instrumentation is unavailable")
    else:
        raise InputError(f"no reference minima for kind {spec.kind!r}")

    limits, ok = descend_points(spec, starts, descent)
    if not np.all(ok):
        raise DivergenceError("descent from a reference start did not converge", last_iterate=limits[~ok][0])
    found: list[np.ndarray] = []
    for p in limits:
        if all(np.linalg.norm(p - q) > 1e-4 for q in found):
            found.append(p)
    minima = sorted((CriticalPoint(position=p, value=float(spec.value(p))) for p in found), key=lambda m: m.value)
    return CriticalPointSet(minima=tuple(minima))


def classify_basin(spec: PotentialSpec, x: Any, descent: DescentConfig = DescentConfig()) -> int:
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise InputError("classify_basin needs a finite point")
    if x.size != spec.dimension:
        raise InputError(f"point has length {x.size}, potential dimension is {spec.dimension}")
    minima = reference_minima(spec)
    limit, ok = descend_points(spec, x, descent)
    if not ok[0]:
        raise DivergenceError(
            f"descent did not reach gradient norm {descent.tol} within {descent.max_iter} iterations",
            last_iterate=limit[0],
        )
    return _nearest_label(minima.positions(), limit)[0]


def _nearest_label(positions: np.ndarray, points: np.ndarray) -> np.ndarray:
    dist = np.linalg.norm(points[:, None, :] - positions[None, :, :], axis=2)
    return np.argmin(dist, axis=1) + 1


def outside_global_basin_ips(spec: InteractingParticles, points: np.ndarray) -> np.ndarray:
    """Threshold test: every coordinate is past 0.11, or in [0, 0.11) and pushed right by the drift."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    drift = -spec.gradient(pts)
    right = (pts > IPS_THRESHOLD) | ((pts >= 0.0) & (pts < IPS_THRESHOLD) & (drift > 0.0))
    return np.all(right, axis=1)


class BasinLabeler:
    """Per-row basin labels for the engine's instrumentation.

    ``stride`` is 1 for labels that are a cheap closed-form test and the
    configured check stride for descent-based labels.
    """

    def __init__(self, spec: PotentialSpec, check_stride: int = 10) -> None:
        self.spec = spec
        self._split: float | None = None
        self._minima: CriticalPointSet | None = None
        self.stride = 1
        if isinstance(spec, DoubleWell1D):
            self._split = float(reference_minima(spec).saddles[0].position[0])
        elif isinstance(spec, (InteractingParticles, LehmerQuadratic)):
            pass
        elif isinstance(spec, Rosenbrock) and spec.dimension < 4:
            pass
        else:
            self._minima = reference_minima(spec)
            if len(self._minima.minima) > 1:
                self.stride = check_stride
        self._descent = DescentConfig(step=1.0e-3, tol=1.0e-6, max_iter=200_000, capture_radius=0.05)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        n = points.shape[0]
        spec = self.spec
        if self._split is not None:
            return np.where(points[:, 0] < self._split, 1, 2)
        if isinstance(spec, InteractingParticles):
            return np.where(outside_global_basin_ips(spec, points), 2, 1)
        if self._minima is None or len(self._minima.minima) == 1:
            return np.ones(n, dtype=np.int64)
        targets = self._minima.positions()
        limits, _ = descend_points(spec, points, self._descent, targets=targets)
        return _nearest_label(targets, limits)
