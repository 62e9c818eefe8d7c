"""Simplified string method and barrier read-out along the resulting path.

Each iteration moves the interior images one explicit-Euler step down the
gradient, then redistributes all images at equal arc length by piecewise-linear
interpolation. The endpoints never move.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from ..errors import InputError
from .basins import finite_difference_hessian
from .potentials import PotentialSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StringPath:
    images: np.ndarray
    energies: np.ndarray
    converged: bool
    iterations: int
    spec: PotentialSpec = field(repr=False, compare=False)

    @property
    def arclength(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.images, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def rows(self) -> Iterable[dict[str, Any]]:
        for s, z, e in zip(self.arclength, self.images, self.energies):
            row: dict[str, Any] = {"arclength": float(s)}
            row.update({f"x{j}": float(v) for j, v in enumerate(z)})
            row["energy"] = float(e)
            yield row


@dataclass(frozen=True)
class Barrier:
    """One peak of the energy profile.

    ``ascent`` is measured from the lowest point between the peak and the end
    of the path, ``descent`` from the lowest point between the peak and the
    start: the climb of a transition from the end side into the start side,
    and the drop after it.
    """

    ascent: float
    descent: float
    peak: np.ndarray
    peak_energy: float
    arclength: float

    def as_pair(self) -> tuple[float, float]:
        return self.ascent, self.descent


def _reparametrize(path: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0:
        return path
    target = np.linspace(0.0, total, path.shape[0])
    out = np.column_stack([np.interp(target, s, path[:, j]) for j in range(path.shape[1])])
    out[0], out[-1] = path[0], path[-1]
    return out


def initial_string(start: np.ndarray, end: np.ndarray, images: int, waypoints: Sequence[Any] = ()) -> np.ndarray:
    knots = np.vstack([start, *[np.asarray(w, dtype=float).reshape(-1) for w in waypoints], end])
    seg = np.linalg.norm(np.diff(knots, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        return np.tile(start, (images, 1))
    target = np.linspace(0.0, s[-1], images)
    return np.column_stack([np.interp(target, s, knots[:, j]) for j in range(knots.shape[1])])


def string_method(
    spec: PotentialSpec,
    start: Any,
    end: Any,
    images: int = 64,
    step: float = 1.0e-3,
    iters: int = 20_000,
    tol: float = 1.0e-7,
    waypoints: Sequence[Any] = (),
) -> StringPath:
    a = np.asarray(start, dtype=float).reshape(-1)
    b = np.asarray(end, dtype=float).reshape(-1)
    if a.size != spec.dimension or b.size != spec.dimension:
        raise InputError(f"string endpoints must have length {spec.dimension}")
    if images < 3:
        raise InputError(f"string needs at least 3 images, got {images}")
    if not step > 0 or iters < 1:
        raise InputError("string step must be > 0 and iters >= 1")

    path = initial_string(a, b, images, waypoints)
    converged = False
    it = 0
    for it in range(1, iters + 1):
        prev = path.copy()
        path[1:-1] -= step * spec.gradient(path[1:-1])
        path = _reparametrize(path)
        if np.max(np.linalg.norm(path - prev, axis=1)) < tol:
            converged = True
            break
    if not converged:
        logger.warning("string did not converge in %d iterations", iters)
    return StringPath(images=path, energies=spec.value(path), converged=converged, iterations=it, spec=spec)


def perpendicular_gradient(path: StringPath) -> np.ndarray:
    """|grad U - (grad U . tau) tau| at interior images, tau the central-difference tangent."""
    z = path.images
    tau = z[2:] - z[:-2]
    norm = np.linalg.norm(tau, axis=1, keepdims=True)
    tau = np.divide(tau, norm, out=np.zeros_like(tau), where=norm > 0)
    g = path.spec.gradient(z[1:-1])
    perp = g - np.sum(g * tau, axis=1, keepdims=True) * tau
    return np.linalg.norm(perp, axis=1)


def refine_critical_point(spec: PotentialSpec, x: Any, max_iter: int = 50, tol: float = 1.0e-10) -> np.ndarray:
    """Newton on grad U = 0 with a finite-difference Hessian."""
    z = np.asarray(x, dtype=float).reshape(-1).copy()
    for _ in range(max_iter):
        g = spec.gradient(z)
        if np.linalg.norm(g) < tol:
            break
        try:
            z = z - np.linalg.solve(finite_difference_hessian(spec, z), g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(z)):
            return np.asarray(x, dtype=float).reshape(-1)
    return z


def _extrema(energies: np.ndarray) -> tuple[list[int], list[int]]:
    e = energies
    peaks = [i for i in range(1, e.size - 1) if e[i] > e[i - 1] and e[i] >= e[i + 1]]
    valleys = [i for i in range(1, e.size - 1) if e[i] < e[i - 1] and e[i] <= e[i + 1]]
    return peaks, valleys


def _refined_energy(path: StringPath, i: int) -> tuple[np.ndarray, float]:
    z = path.images[i]
    spacing = float(np.max(np.linalg.norm(np.diff(path.images, axis=0), axis=1)))
    r = refine_critical_point(path.spec, z)
    if np.linalg.norm(r - z) > 2.0 * spacing:
        return z, float(path.energies[i])
    return r, float(path.spec.value(r))


def _profile(path: StringPath) -> tuple[list[int], list[int], dict[int, tuple[np.ndarray, float]]]:
    peaks, valleys = _extrema(path.energies)
    points: dict[int, tuple[np.ndarray, float]] = {
        0: (path.images[0], float(path.energies[0])),
        path.energies.size - 1: (path.images[-1], float(path.energies[-1])),
    }
    for i in peaks + valleys:
        points[i] = _refined_energy(path, i)
    return peaks, valleys, points


def barriers_along_path(path: StringPath) -> list[Barrier]:
    """Peaks of the energy profile ordered from the start, with climbs measured from the end side."""
    if not path.converged:
        logger.warning("reading barriers from an unconverged string")
    peaks, valleys, points = _profile(path)
    if not peaks:
        return []
    last = path.energies.size - 1
    lows = sorted([0, last] + valleys)
    s = path.arclength
    out: list[Barrier] = []
    for j, p in enumerate(peaks):
        before = peaks[j - 1] if j > 0 else 0
        after = peaks[j + 1] if j + 1 < len(peaks) else last
        start_side = min(
            [points[i][1] for i in lows if before <= i < p] or [float(path.energies[before:p].min())]
        )
        end_side = min(
            [points[i][1] for i in lows if p < i <= after] or [float(path.energies[p + 1 : after + 1].min())]
        )
        pos, height = points[p]
        out.append(
            Barrier(
                ascent=height - end_side,
                descent=height - start_side,
                peak=pos,
                peak_energy=height,
                arclength=float(s[p]),
            )
        )
    return out


def essential_barrier_along_path(path: StringPath) -> float:
    """max over path minima of (highest peak between it and the start) - U(minimum)."""
    peaks, valleys, points = _profile(path)
    if not peaks:
        return 0.0
    last = path.energies.size - 1
    best = 0.0
    for m in sorted(valleys + [last]):
        between = [points[p][1] for p in peaks if p < m]
        if between:
            best = max(best, max(between) - points[m][1])
    return best
