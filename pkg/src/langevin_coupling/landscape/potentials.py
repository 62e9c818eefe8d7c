"""Differentiable test landscapes.

Every potential accepts one point (shape ``(k,)``) or a stack of points (shape
``(B, k)``) and answers with a matching shape, so a block of samples can be
advanced together.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, ClassVar, Iterator

import numpy as np
import scipy.linalg

from ..errors import InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PotentialSpec:
    kind: ClassVar[str] = ""

    @property
    def dimension(self) -> int:
        raise NotImplementedError

    def value(self, x: Any) -> Any:
        pts, single = self._as_points(x)
        out = self._values(pts)
        return float(out[0]) if single else out

    def gradient(self, x: Any) -> np.ndarray:
        pts, single = self._as_points(x)
        out = self._gradients(pts)
        return out[0] if single else out

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        for f in dataclasses.fields(self):
            if f.init:
                v = getattr(self, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def _as_points(self, x: Any) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=float)
        single = arr.ndim <= 1
        pts = arr.reshape(1, -1) if single else arr
        if pts.ndim != 2 or pts.shape[1] != self.dimension:
            raise InputError(
                f"{self.kind}: expected points of dimension {self.dimension}, got shape {arr.shape}"
            )
        return pts, single

    def _values(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _gradients(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def value(spec: PotentialSpec, x: Any) -> Any:
    return spec.value(x)


def gradient(spec: PotentialSpec, x: Any) -> np.ndarray:
    return spec.gradient(x)


def _well(x: np.ndarray) -> np.ndarray:
    return x**4 - 2.0 * x**2 + 0.2 * x


def _well_slope(x: np.ndarray) -> np.ndarray:
    return 4.0 * x**3 - 4.0 * x + 0.2


# ---------------------------------------------------------------------------
# quadratic


def lehmer_matrix(k: int) -> np.ndarray:
    """A_ij = min(i, j) / max(i, j), 1-based."""
    if k < 1:
        raise InputError(f"Lehmer matrix size must be >= 1, got {k}")
    idx = np.arange(1, k + 1, dtype=float)
    return np.minimum.outer(idx, idx) / np.maximum.outer(idx, idx)


def least_eigenvalue(a: Any, *, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Smallest eigenvalue of a symmetric matrix by inverse iteration.

    The shift is 0 when the matrix is positive definite, otherwise it is placed
    below the Gershgorin lower bound so the shifted matrix is.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
        raise InputError("least_eigenvalue needs a symmetric matrix")
    k = a.shape[0]

    shift = 0.0
    try:
        scipy.linalg.cholesky(a, lower=True)
    except np.linalg.LinAlgError:
        radii = np.sum(np.abs(a), axis=1) - np.abs(np.diag(a))
        shift = float(np.min(np.diag(a) - radii)) - 1.0

    lu = scipy.linalg.lu_factor(a - shift * np.eye(k))
    v = np.linspace(1.0, 2.0, k)
    v /= np.linalg.norm(v)
    lam = float(v @ a @ v)
    for _ in range(max_iter):
        w = scipy.linalg.lu_solve(lu, v)
        v = w / np.linalg.norm(w)
        lam_next = float(v @ a @ v)
        if abs(lam_next - lam) < tol:
            return lam_next
        lam = lam_next
    logger.warning("inverse iteration stopped after %d iterations", max_iter)
    return lam


@dataclass(frozen=True)
class LehmerQuadratic(PotentialSpec):
    kind: ClassVar[str] = "lehmer_quadratic"
    size: int = 2
    matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "matrix", lehmer_matrix(self.size))

    @property
    def dimension(self) -> int:
        return self.size

    def _values(self, pts: np.ndarray) -> np.ndarray:
        return 0.5 * np.einsum("bi,ij,bj->b", pts, self.matrix, pts)

    def _gradients(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.matrix


# ---------------------------------------------------------------------------
# double well and interacting particles


@dataclass(frozen=True)
class DoubleWell1D(PotentialSpec):
    """U(x) = x^4 - 2x^2 + 0.2x."""

    kind: ClassVar[str] = "double_well_1d"

    @property
    def dimension(self) -> int:
        return 1

    def _values(self, pts: np.ndarray) -> np.ndarray:
        return _well(pts[:, 0])

    def _gradients(self, pts: np.ndarray) -> np.ndarray:
        return _well_slope(pts)


@dataclass(frozen=True)
class InteractingParticles(PotentialSpec):
    """Particles in the double well with pairwise coupling sigma_int * sum_{i<j} (x_i - x_j)^2."""

    kind: ClassVar[str] = "interacting_particles"
    particles: int = 3
    sigma_int: float = 0.05

    def __post_init__(self) -> None:
        if self.particles < 1:
            raise InputError(f"particles must be >= 1, got {self.particles}")
        if self.sigma_int < 0:
            raise InputError(f"sigma_int must be >= 0, got {self.sigma_int}")

    @property
    def dimension(self) -> int:
        return self.particles

    def _values(self, pts: np.ndarray) -> np.ndarray:
        n = self.particles
        s1 = pts.sum(axis=1)
        s2 = (pts**2).sum(axis=1)
        # sum_{i<j} (x_i - x_j)^2 = n * sum x^2 - (sum x)^2
        pair = n * s2 - s1**2
        return _well(pts).sum(axis=1) + self.sigma_int * pair

    def _gradients(self, pts: np.ndarray) -> np.ndarray:
        n = self.particles
        s1 = pts.sum(axis=1, keepdims=True)
        return _well_slope(pts) + 2.0 * self.sigma_int * (n * pts - s1)


# ---------------------------------------------------------------------------
# Rosenbrock


@dataclass(frozen=True)
class Rosenbrock(PotentialSpec):
    kind: ClassVar[str] = "rosenbrock"
    n: int = 2
    a: float = 1.0
    b: float = 20.0

    def __post_init__(self) -> None:
        if self.n < 2:
            raise InputError(f"Rosenbrock dimension must be >= 2, got {self.n}")
        if not self.b > 0:
            raise InputError(f"Rosenbrock b must be > 0, got {self.b}")

    @property
    def dimension(self) -> int:
        return self.n

    def _values(self, pts: np.ndarray) -> np.ndarray:
        head, tail = pts[:, :-1], pts[:, 1:]
        return (self.b * (tail - head**2) ** 2 + (self.a - head) ** 2).sum(axis=1)

    def _gradients(self, pts: np.ndarray) -> np.ndarray:
        head, tail = pts[:, :-1], pts[:, 1:]
        inner = tail - head**2
        g = np.zeros_like(pts)
        g[:, :-1] += -4.0 * self.b * head * inner - 2.0 * (self.a - head)
        g[:, 1:] += 2.0 * self.b * inner
        return g


# ---------------------------------------------------------------------------
# two-hidden-layer ReLU network loss


@dataclass(frozen=True)
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    def __iter__(self) -> Iterator[tuple[np.ndarray, float]]:
        for x, y in zip(self.inputs, self.targets):
            yield x, float(y)


def build_ann_training_set(seed: int, m: int) -> TrainingSet:
    """Inputs uniform on [-1, 1]^2, targets |x|^2."""
    if m < 1:
        raise InputError(f"training set size must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-1.0, 1.0, size=(m, 2))
    return TrainingSet(inputs=inputs, targets=(inputs**2).sum(axis=1))


@dataclass(frozen=True)
class AnnLoss(PotentialSpec):
    """Squared-error loss of y = W3 relu(W2 relu(W1 x + b1) + b2) + b3 over a fixed training set.

    Parameters are flattened as W1, b1, W2, b2, W3, b3 with matrices row-major.
    ReLU'(0) is taken as 0.
    """

    kind: ClassVar[str] = "ann_loss"
    n1: int = 4
    n2: int = 3
    seed: int = 0
    m: int = 100
    data: TrainingSet = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n1 < 1 or self.n2 < 1:
            raise InputError(f"layer widths must be >= 1, got ({self.n1}, {self.n2})")
        object.__setattr__(self, "data", build_ann_training_set(self.seed, self.m))

    @property
    def dimension(self) -> int:
        return self.n1 * self.n2 + 3 * self.n1 + 2 * self.n2 + 1

    def unflatten(self, theta: np.ndarray) -> tuple[np.ndarray, ...]:
        n1, n2 = self.n1, self.n2
        bsz = theta.shape[0]
        sizes = (2 * n1, n1, n1 * n2, n2, n2, 1)
        cuts = np.cumsum(sizes)[:-1]
        w1, b1, w2, b2, w3, b3 = np.split(theta, cuts, axis=1)
        return (
            w1.reshape(bsz, n1, 2),
            b1,
            w2.reshape(bsz, n2, n1),
            b2,
            w3,
            b3[:, 0],
        )

    def _forward(self, pts: np.ndarray) -> tuple[np.ndarray, ...]:
        w1, b1, w2, b2, w3, b3 = self.unflatten(pts)
        xs = self.data.inputs
        z1 = np.einsum("bij,mj->bmi", w1, xs) + b1[:, None, :]
        a1 = np.maximum(z1, 0.0)
        z2 = np.einsum("bij,bmj->bmi", w2, a1) + b2[:, None, :]
        a2 = np.maximum(z2, 0.0)
        out = np.einsum("bj,bmj->bm", w3, a2) + b3[:, None]
        resid = out - self.data.targets[None, :]
        return z1, a1, z2, a2, resid

    def _values(self, pts: np.ndarray) -> np.ndarray:
        resid = self._forward(pts)[-1]
        return (resid**2).sum(axis=1)

    def _gradients(self, pts: np.ndarray) -> np.ndarray:
        _, _, w2, _, w3, _ = self.unflatten(pts)
        z1, a1, z2, a2, resid = self._forward(pts)
        bsz = pts.shape[0]

        d_out = 2.0 * resid
        d_w3 = np.einsum("bm,bmj->bj", d_out, a2)
        d_b3 = d_out.sum(axis=1, keepdims=True)
        d_z2 = d_out[:, :, None] * w3[:, None, :] * (z2 > 0.0)
        d_w2 = np.einsum("bmi,bmj->bij", d_z2, a1)
        d_b2 = d_z2.sum(axis=1)
        d_z1 = np.einsum("bmi,bij->bmj", d_z2, w2) * (z1 > 0.0)
        d_w1 = np.einsum("bmi,mj->bij", d_z1, self.data.inputs)
        d_b1 = d_z1.sum(axis=1)

        return np.concatenate(
            [d_w1.reshape(bsz, -1), d_b1, d_w2.reshape(bsz, -1), d_b2, d_w3, d_b3],
            axis=1,
        )

    def pre_activations(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts, _ = self._as_points(theta)
        z1, _, z2, _, _ = self._forward(pts)
        return z1, z2


_KINDS: dict[str, type[PotentialSpec]] = {
    cls.kind: cls for cls in (LehmerQuadratic, DoubleWell1D, InteractingParticles, Rosenbrock, AnnLoss)
}


def potential_kinds() -> tuple[str, ...]:
    return tuple(_KINDS)


def potential_from_dict(raw: dict[str, Any]) -> PotentialSpec:
    data = dict(raw)
    kind = data.pop("kind", None)
    if kind not in _KINDS:
        raise InputError(f"potential.kind: unknown kind {kind!r}; expected one of {', '.join(_KINDS)}")
    cls = _KINDS[kind]
    allowed = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise InputError(f"potential: unknown key(s) {', '.join(unknown)} for kind {kind!r}")
    return cls(**data)


def potential_to_dict(spec: PotentialSpec) -> dict[str, Any]:
    return spec.to_dict()
