"""Where does a survival curve become exponential, and how fast does it decay there.

The curve P[tau > t_i] is estimated at grid times with Agresti-Coull intervals.
A line is fitted to log p~ over i = N0..N with weights n_i / M, and the smallest
N0 whose line stays inside the log-scale intervals at all but a fraction alpha of
its points, and decays by more than round-off, is located by binary search. When
the shortest window at the far tail is rejected the search falls back to a scan.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Literal, Sequence

import numpy as np

from ..errors import DegenerateFitError, InputError, NoExponentialTailError
from ..protocol.types import CouplingRecord

logger = logging.getLogger(__name__)

HIGH_CENSORING = 0.2
# smallest log-decay across a fit window that counts as a slope rather than round-off
MIN_LOG_DECAY = 1e-6

Spacing = Literal["uniform", "log"]


@dataclass(frozen=True)
class GridConfig:
    points: int = 200
    spacing: Spacing = "uniform"
    min_uncensored: int = 1000
    z: float = 1.96
    alpha: float = 0.05
    min_tail_points: int = 5

    def __post_init__(self) -> None:
        if self.points < 3:
            raise InputError(f"grid.points must be >= 3, got {self.points}")
        if self.spacing not in ("uniform", "log"):
            raise InputError(f"grid.spacing must be 'uniform' or 'log', got {self.spacing!r}")
        if self.min_uncensored < 1:
            raise InputError(f"grid.min_uncensored must be >= 1, got {self.min_uncensored}")
        if not self.z > 0:
            raise InputError(f"grid.z must be > 0, got {self.z}")
        if not 0 < self.alpha < 1:
            raise InputError(f"grid.alpha must be in (0, 1), got {self.alpha}")
        if self.min_tail_points < 2:
            raise InputError(f"grid.min_tail_points must be >= 2, got {self.min_tail_points}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "points": self.points,
            "spacing": self.spacing,
            "min_uncensored": self.min_uncensored,
            "z": self.z,
            "alpha": self.alpha,
            "min_tail_points": self.min_tail_points,
        }


def agresti_coull(n_i: int, m: int, z: float = 1.96) -> tuple[float, float, float]:
    """(p~, lower, upper) with bounds clamped to [0, 1]."""
    if m < 1:
        raise InputError(f"total must be >= 1, got {m}")
    if not 0 <= n_i <= m:
        raise InputError(f"count must be in [0, {m}], got {n_i}")
    if not z > 0:
        raise InputError(f"z must be > 0, got {z}")
    m_tilde = m + z * z
    p = (n_i + z * z / 2.0) / m_tilde
    half = z * math.sqrt(p * (1.0 - p) / m_tilde)
    return p, max(0.0, p - half), min(1.0, p + half)


def _agresti_coull_arrays(counts: np.ndarray, m: int, z: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m_tilde = m + z * z
    p = (counts + z * z / 2.0) / m_tilde
    half = z * np.sqrt(p * (1.0 - p) / m_tilde)
    return p, np.clip(p - half, 0.0, 1.0), np.clip(p + half, 0.0, 1.0)


def weighted_regression(points: Any, weights: Any) -> tuple[float, float]:
    """Slope and intercept minimising sum w_i (y_i - a t_i - b)^2."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    w = np.asarray(weights, dtype=float)
    if w.shape != (pts.shape[0],):
        raise InputError(f"expected {pts.shape[0]} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise InputError("weights must be >= 0")
    total = w.sum()
    if not total > 0:
        raise DegenerateFitError("all regression weights are zero")
    t, y = pts[:, 0], pts[:, 1]
    t_bar = float(w @ t) / total
    y_bar = float(w @ y) / total
    s_tt = float(w @ (t - t_bar) ** 2)
    if not s_tt > 0:
        raise DegenerateFitError("regression needs at least two distinct times with positive weight")
    a = float(w @ ((t - t_bar) * (y - y_bar))) / s_tt
    return a, y_bar - a * t_bar


@dataclass(frozen=True)
class SurvivalCurve:
    times: np.ndarray
    counts: np.ndarray
    total: int
    z_quantile: float = 1.96
    alpha: float = 0.05

    def __post_init__(self) -> None:
        if self.total < 1:
            raise InputError(f"survival curve total must be >= 1, got {self.total}")
        if self.times.shape != self.counts.shape or self.times.ndim != 1:
            raise InputError("times and counts must be 1-D arrays of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise InputError("survival times must be strictly increasing")
        if np.any(np.diff(self.counts) > 0) or np.any(self.counts > self.total) or np.any(self.counts < 0):
            raise InputError("survival counts must be non-increasing and within [0, total]")

    @classmethod
    def from_times(
        cls,
        times: Any,
        grid_times: Any,
        z_quantile: float = 1.96,
        alpha: float = 0.05,
    ) -> "SurvivalCurve":
        """n_i = #{tau > t_i}; censored samples enter with their cap time."""
        tau = np.sort(np.asarray(times, dtype=float))
        t = np.asarray(grid_times, dtype=float)
        counts = tau.size - np.searchsorted(tau, t, side="right")
        return cls(times=t, counts=counts.astype(np.int64), total=int(tau.size), z_quantile=z_quantile, alpha=alpha)

    def intervals(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _agresti_coull_arrays(self.counts.astype(float), self.total, self.z_quantile)


@dataclass(frozen=True)
class TailPoint:
    t: float
    p_tilde: float
    lower: float
    upper: float
    weight: float


@dataclass(frozen=True)
class TailEstimate:
    slope_a: float
    intercept_b: float
    t_star: float
    n0_index: int
    violations: int
    per_point: tuple[TailPoint, ...] = field(repr=False)
    sample_count: int = 0
    censored_fraction: float = 0.0
    high_censoring: bool = False
    scanned: bool = False

    @property
    def rate_r(self) -> float:
        return -self.slope_a

    def fitted(self, t: Any) -> np.ndarray:
        return self.slope_a * np.asarray(t, dtype=float) + self.intercept_b

    def to_dict(self) -> dict[str, Any]:
        return {
            "slope_a": self.slope_a,
            "intercept_b": self.intercept_b,
            "rate_r": self.rate_r,
            "t_star": self.t_star,
            "n0_index": self.n0_index,
            "violations": self.violations,
            "sample_count": self.sample_count,
            "censored_fraction": self.censored_fraction,
            "high_censoring": self.high_censoring,
            "scanned": self.scanned,
            "per_point": [
                {"t": p.t, "p_tilde": p.p_tilde, "lower": p.lower, "upper": p.upper, "weight": p.weight}
                for p in self.per_point
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "TailEstimate":
        return cls(
            slope_a=float(raw["slope_a"]),
            intercept_b=float(raw["intercept_b"]),
            t_star=float(raw["t_star"]),
            n0_index=int(raw["n0_index"]),
            violations=int(raw["violations"]),
            per_point=tuple(TailPoint(**p) for p in raw.get("per_point", [])),
            sample_count=int(raw.get("sample_count", 0)),
            censored_fraction=float(raw.get("censored_fraction", 0.0)),
            high_censoring=bool(raw.get("high_censoring", False)),
            scanned=bool(raw.get("scanned", False)),
        )


@dataclass(frozen=True)
class _Fit:
    a: float
    b: float
    violations: int
    accepted: bool


def find_t_star(curve: SurvivalCurve, min_tail_points: int = 5) -> TailEstimate:
    p, lower, upper = curve.intervals()
    weights = curve.counts / curve.total
    usable = np.flatnonzero(curve.counts > 0)
    if usable.size < max(3, min_tail_points):
        raise InputError(
            f"survival curve has {usable.size} grid points with n_i >= 1; need {max(3, min_tail_points)}"
        )
    t_u = curve.times[usable]
    w_u = weights[usable]
    with np.errstate(divide="ignore"):
        log_p = np.log(p[usable])
        log_lo = np.log(lower[usable])
        log_hi = np.log(upper[usable])
    last = usable.size - 1
    cache: dict[int, _Fit] = {}

    def fit(n0: int) -> _Fit:
        if n0 in cache:
            return cache[n0]
        sl = slice(n0, None)
        try:
            a, b = weighted_regression(np.column_stack([t_u[sl], log_p[sl]]), w_u[sl])
        except DegenerateFitError:
            cache[n0] = _Fit(float("nan"), float("nan"), last - n0 + 1, False)
            return cache[n0]
        line = a * t_u[sl] + b
        violations = int(np.count_nonzero((line < log_lo[sl]) | (line > log_hi[sl])))
        decay = -a * float(t_u[-1] - t_u[n0])
        ok = violations < curve.alpha * (last - n0 + 1) and decay > MIN_LOG_DECAY
        cache[n0] = _Fit(a, b, violations, ok)
        return cache[n0]

    top = last - min_tail_points + 1
    scanned = False
    if fit(top).accepted:
        lo, hi = 0, top
        while lo < hi:
            mid = (lo + hi) // 2
            if fit(mid).accepted:
                hi = mid
            else:
                lo = mid + 1
        n0 = lo
        if n0 < top and not fit(n0 + 1).accepted:
            scanned = True
            start = n0
            while n0 < top and not (fit(n0).accepted and fit(n0 + 1).accepted):
                n0 += 1
            logger.warning("acceptance is not monotone in N0 near %d; linear scan settled on %d", start, n0)
    else:
        # sparse far-tail windows are often flat; look for the first accepted start instead
        scanned = True
        found = next((k for k in range(top + 1) if fit(k).accepted), None)
        if found is None:
            raise NoExponentialTailError(
                f"no exponential tail: no start among {top + 1} grid points passes the acceptance test"
            )
        n0 = found
        logger.info("last %d usable points rejected; linear scan settled on N0=%d", min_tail_points, n0)

    best = fit(n0)
    per_point = tuple(
        TailPoint(t=float(t), p_tilde=float(pi), lower=float(lo_), upper=float(hi_), weight=float(w))
        for t, pi, lo_, hi_, w in zip(curve.times, p, lower, upper, weights)
    )
    return TailEstimate(
        slope_a=best.a,
        intercept_b=best.b,
        t_star=float(t_u[n0]),
        n0_index=int(usable[n0]),
        violations=best.violations,
        per_point=per_point,
        sample_count=curve.total,
        scanned=scanned,
    )


def grid_times(times: np.ndarray, grid: GridConfig) -> np.ndarray:
    t_max = float(np.max(times))
    if grid.spacing == "uniform":
        return np.linspace(0.0, t_max, grid.points)
    positive = times[times > 0]
    t_min = max(float(positive.min()) if positive.size else t_max, t_max * 1e-4)
    if not t_min < t_max:
        return np.linspace(0.0, t_max, grid.points)
    return np.concatenate([[0.0], np.geomspace(t_min, t_max, grid.points - 1)])


def estimate_rate_from_times(times: Any, censored: Any | None, grid: GridConfig = GridConfig()) -> TailEstimate:
    tau = np.asarray(times, dtype=float)
    cens = np.zeros(tau.shape, dtype=bool) if censored is None else np.asarray(censored, dtype=bool)
    if tau.ndim != 1 or cens.shape != tau.shape:
        raise InputError("times and censored flags must be 1-D arrays of equal length")
    observed = tau[~cens]
    if observed.size < grid.min_uncensored:
        raise InputError(
            f"need at least {grid.min_uncensored} uncensored samples, got {observed.size} of {tau.size}"
        )
    if np.ptp(observed) == 0:
        raise DegenerateFitError(f"all {observed.size} observed times equal {observed[0]:g}; no tail to fit")
    fraction = float(cens.mean()) if tau.size else 0.0
    high = fraction > HIGH_CENSORING
    if high:
        logger.warning("%.1f%% of samples are censored", 100.0 * fraction)

    curve = SurvivalCurve.from_times(tau, grid_times(observed, grid), grid.z, grid.alpha)
    est = find_t_star(curve, grid.min_tail_points)
    return TailEstimate(
        slope_a=est.slope_a,
        intercept_b=est.intercept_b,
        t_star=est.t_star,
        n0_index=est.n0_index,
        violations=est.violations,
        per_point=est.per_point,
        sample_count=int(tau.size),
        censored_fraction=fraction,
        high_censoring=high,
        scanned=est.scanned,
    )


def estimate_rate(records: Sequence[CouplingRecord], grid: GridConfig = GridConfig()) -> TailEstimate:
    return estimate_rate_from_times([r.tau_c for r in records], [r.censored for r in records], grid)


def bootstrap_rate_error(
    rate: float,
    m: int,
    grid: GridConfig = GridConfig(),
    replicates: int = 50,
    seed: int = 0,
) -> float:
    """Standard deviation of the recovered rate over synthetic Exp(rate) samples of size m."""
    if not rate > 0:
        raise InputError(f"rate must be > 0, got {rate}")
    rng = np.random.default_rng(seed)
    rates: list[float] = []
    for _ in range(replicates):
        sample = rng.exponential(1.0 / rate, size=m)
        try:
            rates.append(estimate_rate_from_times(sample, None, grid).rate_r)
        except (NoExponentialTailError, DegenerateFitError):
            continue
    if len(rates) < 2:
        raise DegenerateFitError(f"only {len(rates)} of {replicates} bootstrap replicates produced a fit")
    return float(np.std(rates, ddof=1))


def survival_rows(epsilon: float, estimate: TailEstimate) -> Iterable[dict[str, Any]]:
    """Plot rows: log p~ with its interval and the fitted line, per grid time."""
    for p in estimate.per_point:
        yield {
            "epsilon": epsilon,
            "t": p.t,
            "log_p": math.log(p.p_tilde),
            "log_lower": math.log(p.lower) if p.lower > 0 else float("-inf"),
            "log_upper": math.log(p.upper),
            "fit": float(estimate.fitted(p.t)),
            "in_tail": p.t >= estimate.t_star,
        }
