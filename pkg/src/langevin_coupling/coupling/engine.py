"""Reflection-maximal coupling of two Euler-Maruyama chains.

Two entry points share the same numerical kernels:

* the single-pair API (``reflection_step``, ``maximal_step``, ``coupled_step``,
  ``advance``, ``trace_pair``) moves one ``CoupledState`` and draws from its
  generator;
* ``simulate_block`` advances a block of independent pairs in lock-step.
  Every row of a block consumes its own slice of each step's draws, whether it
  is still running or not, so a row's path depends only on its block stream.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from ..errors import DivergenceError, InputError
from ..landscape.basins import BasinLabeler
from ..landscape.potentials import PotentialSpec
from ..protocol.types import (
    CoupledState,
    CouplingRecord,
    InitCondition,
    InstrumentConfig,
    SampleFailure,
    Scheme,
    SimParams,
)

logger = logging.getLogger(__name__)

REFLECTION, MAXIMAL, COUPLED = 0, 1, 2
_SCHEME_NAMES: dict[int, Scheme] = {REFLECTION: "reflection", MAXIMAL: "maximal", COUPLED: "coupled"}
_SCHEME_CODES = {v: k for k, v in _SCHEME_NAMES.items()}


def block_generator(seed: int, block_index: int) -> np.random.Generator:
    """Counter-based stream for one block, keyed by (seed, block index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(block_index,))))


# ---------------------------------------------------------------------------
# kernels on (m, k) arrays


def em_step(spec: PotentialSpec, z: Any, h: float, noise: Any, epsilon: float) -> np.ndarray:
    """z - grad U(z) h + eps sqrt(h) noise, for one point or a stack of points."""
    z = np.asarray(z, dtype=float)
    out = z - h * spec.gradient(z) + epsilon * np.sqrt(h) * np.asarray(noise, dtype=float)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("Euler-Maruyama step produced a non-finite value", last_iterate=z)
    return out


def _reflect(xi: np.ndarray, e: np.ndarray) -> np.ndarray:
    return xi - 2.0 * np.sum(e * xi, axis=1, keepdims=True) * e


def _unit_rows(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    out = np.zeros_like(v)
    np.divide(v, norm, out=out, where=norm > 0)
    return out


def _reflection_kernel(
    spec: PotentialSpec, x: np.ndarray, y: np.ndarray, xi: np.ndarray, params: SimParams
) -> tuple[np.ndarray, np.ndarray]:
    h, sig = params.step, params.noise_scale
    e = _unit_rows(x - y)
    x_new = x - h * spec.gradient(x) + sig * xi
    y_new = y - h * spec.gradient(y) + sig * _reflect(xi, e)
    return x_new, y_new


def _maximal_kernel(
    spec: PotentialSpec,
    x: np.ndarray,
    y: np.ndarray,
    xi: np.ndarray,
    u: np.ndarray,
    params: SimParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Accept/reflect maximal coupling of N(mx, s^2 I) and N(my, s^2 I). Returns (x, y, accepted)."""
    h, sig = params.step, params.noise_scale
    mx = x - h * spec.gradient(x)
    my = y - h * spec.gradient(y)
    delta = (mx - my) / sig
    x_new = mx + sig * xi
    # log phi(xi + delta) - log phi(xi)
    log_ratio = -np.sum(xi * delta, axis=1) - 0.5 * np.sum(delta * delta, axis=1)
    accepted = u < np.exp(np.minimum(log_ratio, 0.0))
    y_new = my + sig * _reflect(xi, _unit_rows(delta))
    y_new[accepted] = x_new[accepted]
    return x_new, y_new, accepted


def _coupled_kernel(spec: PotentialSpec, x: np.ndarray, xi: np.ndarray, params: SimParams) -> np.ndarray:
    return x - params.step * spec.gradient(x) + params.noise_scale * xi


def _next_scheme(x: np.ndarray, y: np.ndarray, threshold: float) -> np.ndarray:
    close = np.linalg.norm(x - y, axis=1) <= threshold
    return np.where(close, MAXIMAL, REFLECTION)


def _diverged(z: np.ndarray, radius: float) -> np.ndarray:
    finite = np.all(np.isfinite(z), axis=1)
    out = ~finite
    out[finite] = np.linalg.norm(z[finite], axis=1) > radius
    return out


# ---------------------------------------------------------------------------
# single pair


def initial_state(x0: Any, y0: Any, params: SimParams, rng: np.random.Generator) -> CoupledState:
    x = np.array(x0, dtype=float).reshape(-1)
    y = np.array(y0, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise InputError(f"x0 and y0 differ in length: {x.size} vs {y.size}")
    if np.array_equal(x, y):
        scheme: Scheme = "coupled"
        y = x.copy()
    else:
        scheme = _SCHEME_NAMES[int(_next_scheme(x[None], y[None], params.threshold)[0])]
    return CoupledState(x=x, y=y, time=0.0, scheme=scheme, rng=rng)


def _check_pair(x: np.ndarray, y: np.ndarray, state: CoupledState, params: SimParams) -> None:
    if _diverged(np.stack([x, y]), params.divergence_radius).any():
        raise DivergenceError(
            f"trajectory left radius {params.divergence_radius} at t={state.time + params.step:g}",
            last_iterate=(state.x.copy(), state.y.copy()),
        )


def reflection_step(spec: PotentialSpec, state: CoupledState, params: SimParams) -> CoupledState:
    if state.scheme != "reflection":
        raise InputError(f"reflection_step called in scheme {state.scheme!r}")
    xi = state.rng.standard_normal((1, state.x.size))
    x, y = _reflection_kernel(spec, state.x[None], state.y[None], xi, params)
    _check_pair(x[0], y[0], state, params)
    scheme = _SCHEME_NAMES[int(_next_scheme(x, y, params.threshold)[0])]
    return replace(state, x=x[0], y=y[0], time=state.time + params.step, scheme=scheme)


def maximal_step(spec: PotentialSpec, state: CoupledState, params: SimParams) -> CoupledState:
    if state.scheme != "maximal":
        raise InputError(f"maximal_step called in scheme {state.scheme!r}")
    xi = state.rng.standard_normal((1, state.x.size))
    u = state.rng.random(1)
    x, y, accepted = _maximal_kernel(spec, state.x[None], state.y[None], xi, u, params)
    _check_pair(x[0], y[0], state, params)
    if accepted[0]:
        return replace(state, x=x[0], y=x[0].copy(), time=state.time + params.step, scheme="coupled")
    scheme = _SCHEME_NAMES[int(_next_scheme(x, y, params.threshold)[0])]
    return replace(state, x=x[0], y=y[0], time=state.time + params.step, scheme=scheme)


def coupled_step(spec: PotentialSpec, state: CoupledState, params: SimParams) -> CoupledState:
    if state.scheme != "coupled":
        raise InputError(f"coupled_step called in scheme {state.scheme!r}")
    xi = state.rng.standard_normal((1, state.x.size))
    x = _coupled_kernel(spec, state.x[None], xi, params)[0]
    _check_pair(x, x, state, params)
    return replace(state, x=x, y=x.copy(), time=state.time + params.step)


def advance(spec: PotentialSpec, state: CoupledState, params: SimParams) -> CoupledState:
    if state.scheme == "reflection":
        return reflection_step(spec, state, params)
    if state.scheme == "maximal":
        return maximal_step(spec, state, params)
    return coupled_step(spec, state, params)


def trace_pair(
    spec: PotentialSpec,
    params: SimParams,
    x0: Any,
    y0: Any,
    rng: np.random.Generator | None = None,
    *,
    max_steps: int | None = None,
    extra_steps: int = 0,
) -> list[CoupledState]:
    """Every state of one pair from time 0 until coupling (plus ``extra_steps``) or the step cap."""
    rng = rng if rng is not None else block_generator(params.seed, 0)
    limit = params.max_steps if max_steps is None else max_steps
    states = [initial_state(x0, y0, params, rng)]
    after = 0
    for _ in range(limit):
        if states[-1].scheme == "coupled":
            if after >= extra_steps:
                break
            after += 1
        states.append(advance(spec, states[-1], params))
    return states


# ---------------------------------------------------------------------------
# blocks


@dataclass
class _Events:
    tau_eps1: np.ndarray
    kappa_x: np.ndarray
    kappa_y: np.ndarray
    xi1: np.ndarray
    exit_time: np.ndarray
    exit_y: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "_Events":
        return cls(*(np.full(n, np.nan) for _ in range(6)))

    def mark(self, name: str, mask: np.ndarray, t: float) -> None:
        arr = getattr(self, name)
        hit = mask & np.isnan(arr)
        arr[hit] = t


def _opt(v: float) -> float | None:
    return None if np.isnan(v) else float(v)


def simulate_block(
    spec: PotentialSpec,
    params: SimParams,
    init: InitCondition,
    instrument: InstrumentConfig,
    block_index: int,
    block_size: int,
    count: int | None = None,
    *,
    labeler: BasinLabeler | None = None,
) -> tuple[list[CouplingRecord], list[SampleFailure]]:
    """Simulate rows ``[block_index * block_size, ... + count)`` of a batch."""
    count = block_size if count is None else count
    if not 0 <= count <= block_size:
        raise InputError(f"count must be in [0, {block_size}], got {count}")
    if count == 0:
        return [], []
    k = spec.dimension
    rng = block_generator(params.seed, block_index)
    x_all, y_all = init.draw(rng, block_size, k)
    x, y = x_all[:count].copy(), y_all[:count].copy()
    h = params.step
    max_steps = params.max_steps

    scheme = _next_scheme(x, y, params.threshold)
    same = np.all(x == y, axis=1)
    scheme[same] = COUPLED
    y[same] = x[same]

    tau_c = np.full(count, np.nan)
    tau_c[same] = 0.0
    steps = np.zeros(count, dtype=np.int64)
    failed = np.zeros(count, dtype=bool)
    reasons: dict[int, str] = {}
    last: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    stopped = np.zeros(count, dtype=bool)

    track = instrument.basins
    if track and labeler is None:
        labeler = BasinLabeler(spec, instrument.basin_check_stride)
    events = _Events.empty(count)
    home = np.zeros(count, dtype=np.int64)
    if track:
        assert labeler is not None
        lx, ly = labeler(x), labeler(y)
        home = ly.copy()
        events.mark("kappa_x", lx == 1, 0.0)
        events.mark("kappa_y", ly == 1, 0.0)
        events.mark("xi1", (lx == 1) & (ly == 1), 0.0)

    def finished() -> np.ndarray:
        coupled = scheme == COUPLED
        if instrument.run_until_xi1:
            coupled &= ~np.isnan(events.xi1)
        return coupled | failed | stopped

    done = finished()
    n = 0
    while n < max_steps and not done.all():
        n += 1
        t = n * h
        xi_all = rng.standard_normal((block_size, k))
        u_all = rng.random(block_size)
        xi, u = xi_all[:count], u_all[:count]

        live = ~done
        x_prev, y_prev = x.copy(), y.copy()
        refl = np.flatnonzero(live & (scheme == REFLECTION))
        maxi = np.flatnonzero(live & (scheme == MAXIMAL))
        coup = np.flatnonzero(live & (scheme == COUPLED))

        newly = np.zeros(count, dtype=bool)
        if refl.size:
            x[refl], y[refl] = _reflection_kernel(spec, x[refl], y[refl], xi[refl], params)
        if maxi.size:
            xm, ym, acc = _maximal_kernel(spec, x[maxi], y[maxi], xi[maxi], u[maxi], params)
            x[maxi], y[maxi] = xm, ym
            newly[maxi[acc]] = True
        if coup.size:
            x[coup] = _coupled_kernel(spec, x[coup], xi[coup], params)
            y[coup] = x[coup]

        moved = np.flatnonzero(live)
        steps[moved] = n
        bad = moved[_diverged(x[moved], params.divergence_radius) | _diverged(y[moved], params.divergence_radius)]
        for i in bad:
            failed[i] = True
            reasons[int(i)] = f"diverged at t={t:g}"
            last[int(i)] = (x_prev[i], y_prev[i])

        uncoupled = np.concatenate([refl, maxi])
        uncoupled = uncoupled[~failed[uncoupled] & ~newly[uncoupled]]
        scheme[uncoupled] = _next_scheme(x[uncoupled], y[uncoupled], params.threshold)
        newly &= ~failed
        scheme[newly] = COUPLED
        tau_c[newly] = t

        if track and (labeler.stride == 1 or n % labeler.stride == 0):
            ok = moved[~failed[moved]]
            lx = np.zeros(count, dtype=np.int64)
            ly = np.zeros(count, dtype=np.int64)
            lx[ok] = labeler(x[ok])
            ly[ok] = labeler(y[ok])
            mask = np.zeros(count, dtype=bool)
            mask[ok] = True
            events.mark("kappa_x", mask & (lx == 1), t)
            events.mark("kappa_y", mask & (ly == 1), t)
            events.mark("xi1", mask & (lx == 1) & (ly == 1), t)
            if n >= 2:
                events.mark("tau_eps1", mask & (lx == ly), t)
            events.mark("exit_time", mask & ((lx != home) | (ly != home)), t)
            events.mark("exit_y", mask & (ly != 1), t)
            if instrument.stop_on_exit:
                stopped |= mask & ~np.isnan(events.exit_time)

        done = finished()

    records: list[CouplingRecord] = []
    failures: list[SampleFailure] = []
    base = block_index * block_size
    for i in range(count):
        idx = base + i
        if failed[i]:
            lx_, ly_ = last[i]
            failures.append(
                SampleFailure(
                    sample_index=idx,
                    reason=reasons[i],
                    last_iterate=(tuple(map(float, lx_)), tuple(map(float, ly_))),
                )
            )
            continue
        censored = bool(np.isnan(tau_c[i]))
        records.append(
            CouplingRecord(
                sample_index=idx,
                tau_c=float(steps[i] * h) if censored else float(tau_c[i]),
                censored=censored,
                steps=int(steps[i]),
                tau_eps1=_opt(events.tau_eps1[i]),
                kappa_x=_opt(events.kappa_x[i]),
                kappa_y=_opt(events.kappa_y[i]),
                xi1=_opt(events.xi1[i]),
                exit_time=_opt(events.exit_time[i]),
                exit_y=_opt(events.exit_y[i]),
                basin_trace_enabled=track,
            )
        )
    return records, failures


def sample_coupling_time(
    spec: PotentialSpec,
    params: SimParams,
    init: InitCondition,
    instrument: InstrumentConfig = InstrumentConfig(),
    sample_index: int = 0,
) -> CouplingRecord:
    """One pair, on the stream a batch with ``block_size=1`` gives sample ``sample_index``."""
    records, failures = simulate_block(spec, params, init, instrument, sample_index, 1)
    if failures:
        f = failures[0]
        raise DivergenceError(f.reason, last_iterate=f.last_iterate, record=f)
    return records[0]


# ---------------------------------------------------------------------------
# first passage at two step sizes


def fine_steps_per_coarse(h: float, h1: float) -> int:
    if not h1 > 0:
        raise InputError(f"h1 must be > 0, got {h1}")
    n = int(round(h / h1))
    if n < 1 or abs(n * h1 - h) > 1e-9 * h:
        raise InputError(f"h1={h1} must divide h={h}")
    return n


def first_passage_block(
    spec: PotentialSpec,
    params: SimParams,
    init: InitCondition,
    h1: float,
    block_index: int,
    block_size: int,
    count: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reflection-coupled pairs run at h1 and at h on shared Brownian increments.

    The coarse pair's standardized noise over one step of size h is the sum of
    the n fine draws divided by sqrt(n). Both pairs stop on |x - y| <= d with
    d = threshold_factor * eps * sqrt(h). Returns (tau at h, tau at h1, censored).
    """
    count = block_size if count is None else count
    n = fine_steps_per_coarse(params.step, h1)
    k = spec.dimension
    rng = block_generator(params.seed, block_index)
    x_all, y_all = init.draw(rng, block_size, k)
    xf, yf = x_all[:count].copy(), y_all[:count].copy()
    xc, yc = xf.copy(), yf.copy()
    d = params.threshold
    fine = replace(params, step=h1, max_time=max(params.max_time, h1))

    tau_c = np.full(count, np.nan)
    tau_f = np.full(count, np.nan)
    start = np.linalg.norm(xf - yf, axis=1) <= d
    tau_c[start] = 0.0
    tau_f[start] = 0.0
    acc = np.zeros((count, k))
    limit = params.max_steps * n

    j = 0
    while j < limit and (np.isnan(tau_c).any() or np.isnan(tau_f).any()):
        j += 1
        xi = rng.standard_normal((block_size, k))[:count]
        run_f = np.flatnonzero(np.isnan(tau_f))
        if run_f.size:
            xf[run_f], yf[run_f] = _reflection_kernel(spec, xf[run_f], yf[run_f], xi[run_f], fine)
            hit = run_f[np.linalg.norm(xf[run_f] - yf[run_f], axis=1) <= d]
            tau_f[hit] = j * h1
        acc += xi
        if j % n == 0:
            run_c = np.flatnonzero(np.isnan(tau_c))
            if run_c.size:
                agg = acc[run_c] / np.sqrt(n)
                xc[run_c], yc[run_c] = _reflection_kernel(spec, xc[run_c], yc[run_c], agg, params)
                hit = run_c[np.linalg.norm(xc[run_c] - yc[run_c], axis=1) <= d]
                tau_c[hit] = (j // n) * params.step
            acc[:] = 0.0
        if _diverged(xf, params.divergence_radius).any() or _diverged(xc, params.divergence_radius).any():
            raise DivergenceError(f"first-passage pair diverged at fine step {j}", last_iterate=(xf, xc))

    censored = np.isnan(tau_c) | np.isnan(tau_f)
    cap = params.max_steps * params.step
    return np.where(np.isnan(tau_c), cap, tau_c), np.where(np.isnan(tau_f), cap, tau_f), censored


def sample_first_passage_pair(
    spec: PotentialSpec,
    params: SimParams,
    init: InitCondition,
    h1: float,
    sample_index: int = 0,
) -> tuple[float, float, bool]:
    tau_hh, tau_hh1, censored = first_passage_block(spec, params, init, h1, sample_index, 1)
    return float(tau_hh[0]), float(tau_hh1[0]), bool(censored[0])
