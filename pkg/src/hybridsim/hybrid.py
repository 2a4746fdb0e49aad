"""Hybrid jump-diffusion engine.

Diffusion channels advance the continuous species by Euler-Maruyama on an
equidistant grid.  Jump channels are driven by a homogeneous reference
Poisson process of intensity ``lambda_max`` carrying uniform marks on
``[0, lambda_max)``: an arrival fires channel r when its mark falls in
``[Lambda_{r-1}, Lambda_r)``, the r-th slot of the cumulative jump
propensities, and is discarded (thinned) when it lands past the total.
Arrival times are merged into the grid, so between arrivals the discrete
species are frozen and the continuous ones purely diffuse.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from . import _kernels
from .errors import ImpossibleEventError, IntensityBoundExceeded
from .network import Partition, ReactionNetwork, State, apply_stoichiometry, propensity
from .streams import HybridStreams
from .trajectory import Diagnostics, Trajectory, sample_times as make_sample_times

LAMBDA_POLICIES = ("fail", "retry_doubled")


@dataclass(frozen=True)
class HybridConfig:
    """Step size ``h``, reference intensity ``lambda_max`` and horizon ``t_max``.

    ``noise_dt`` is the resolution at which Wiener increments are drawn
    (defaults to ``h``; must divide ``h`` an integer number of times).
    Runs that share ``noise_dt`` and a seed see the same Brownian paths, so
    coarser ``h`` sums the same fine increments.  ``diffusion_noise=False``
    drops the Wiener term, leaving the deterministic drift.
    """

    h: float
    lambda_max: float
    t_max: float
    lambda_policy: str = "fail"
    clamp_policy: str = "clamp_zero"
    noise_dt: float | None = None
    diffusion_noise: bool = True
    max_retries: int = 20

    def __post_init__(self):
        if not self.h > 0 or not self.lambda_max > 0 or not self.t_max > 0:
            raise ValueError("h, lambda_max and t_max must be positive")
        if self.lambda_policy not in LAMBDA_POLICIES:
            raise ValueError(f"lambda_policy must be one of {LAMBDA_POLICIES}")
        if self.clamp_policy != "clamp_zero":
            raise ValueError("only clamp_policy='clamp_zero' is supported")
        self.stride  # validates noise_dt

    @property
    def noise_step(self) -> float:
        return self.h if self.noise_dt is None else self.noise_dt

    @property
    def stride(self) -> int:
        m = int(round(self.h / self.noise_step))
        if m < 1 or abs(m * self.noise_step - self.h) > 1e-9 * self.h:
            raise ValueError(f"noise_dt={self.noise_dt} does not divide h={self.h}")
        return m


@dataclass(frozen=True)
class MarkLayout:
    """Cumulative jump propensities ``bounds[0]=0 <= ... <= bounds[-1]``."""

    bounds: np.ndarray
    reactions: tuple[str, ...]
    lambda_max: float

    @property
    def total(self) -> float:
        return float(self.bounds[-1])

    def interval(self, reaction: str) -> tuple[float, float]:
        q = self.reactions.index(reaction)
        return float(self.bounds[q]), float(self.bounds[q + 1])


class ReferenceJump(NamedTuple):
    tau: float
    z: float


class MergedGrid(NamedTuple):
    times: np.ndarray
    is_jump: np.ndarray
    grid_index: np.ndarray  # index k of t0 + k*h, or -1 for a pure jump point


def mark_layout(net: ReactionNetwork, partition: Partition, state: State, lambda_max: float) -> MarkLayout:
    if lambda_max <= 0:
        raise ValueError("lambda_max must be positive")
    a = [propensity(net, r, state) for r in partition.jump]
    bounds = np.cumsum([0.0, *a])
    if bounds[-1] > lambda_max * (1.0 + 1e-12):
        raise IntensityBoundExceeded(state, float(bounds[-1]), lambda_max)
    return MarkLayout(bounds, tuple(partition.jump), float(lambda_max))


def classify_mark(layout: MarkLayout, z: float) -> str | None:
    """Jump reaction whose slot holds ``z``, or ``None`` if the mark is thinned."""
    b = layout.bounds
    for q, rid in enumerate(layout.reactions):
        if b[q] <= z < b[q + 1]:
            return rid
    return None


def next_reference_jump(rng: np.random.Generator, lambda_max: float, t_now: float) -> ReferenceJump:
    if lambda_max <= 0:
        raise ValueError("lambda_max must be positive")
    tau = t_now + rng.standard_exponential() / lambda_max
    return ReferenceJump(tau, rng.random() * lambda_max)


def merged_grid(t0: float, t1: float, h: float, jump_times=()) -> MergedGrid:
    """Union of ``t0, t0+h, ..., t1`` with the jump times.

    A jump within ``1e-12*t1`` of a grid point is merged into that point,
    which then counts as a jump point.
    """
    if not t0 < t1:
        raise ValueError("need t0 < t1")
    K = _kernels.grid_size(t1 - t0, h)
    grid = t0 + np.arange(K + 1) * h
    grid[-1] = t1
    jumps = np.asarray(jump_times, dtype=float)
    tol = 1e-12 * abs(t1)
    times, is_jump, index = [], [], []
    k = j = 0
    while k <= K or j < jumps.size:
        tg = grid[k] if k <= K else math.inf
        tj = jumps[j] if j < jumps.size else math.inf
        if abs(tj - tg) <= tol:
            times.append(tg), is_jump.append(True), index.append(k)
            k += 1
            j += 1
        elif tj < tg:
            times.append(tj), is_jump.append(True), index.append(-1)
            j += 1
        else:
            times.append(tg), is_jump.append(False), index.append(k)
            k += 1
    return MergedGrid(np.array(times), np.array(is_jump, dtype=bool), np.array(index, dtype=np.int64))


def diffusion_step(
    net: ReactionNetwork,
    partition: Partition,
    state: State,
    dt: float,
    dW: Mapping[str, float],
    diagnostics: Diagnostics | None = None,
) -> State:
    """Euler-Maruyama update of the continuous species over ``dt``.

    Propensities are taken at the pre-step state; negative results are
    clamped to zero and counted in ``diagnostics.clamps``.
    """
    full = net.state_vector(state)
    nu = net.arrays.nu
    a = [propensity(net, r, state) for r in partition.diffusion]
    for rid, a_r in zip(partition.diffusion, a):
        incr = a_r * dt + math.sqrt(max(a_r, 0.0)) * dW.get(rid, 0.0)
        row = nu[net.reaction_index[rid]]
        for i in np.nonzero(row)[0]:
            full[i] += row[i] * incr
    cont = net.continuous_idx
    neg = cont[full[cont] < 0.0]
    if neg.size:
        full[neg] = 0.0
        if diagnostics is not None:
            diagnostics.clamps += int(neg.size)
    return net.state_from_vector(full, state.t + dt)


def jump_step(
    net: ReactionNetwork,
    partition: Partition,
    s_minus: State,
    z: float,
    layout: MarkLayout,
    diagnostics: Diagnostics | None = None,
) -> tuple[State, str | None]:
    fired = classify_mark(layout, z)
    if fired is None:
        if diagnostics is not None:
            diagnostics.thinned += 1
        return s_minus, None
    new = apply_stoichiometry(net, s_minus, fired)
    if diagnostics is not None:
        diagnostics.events_per_reaction[fired] = diagnostics.events_per_reaction.get(fired, 0) + 1
    return new, fired


# ---------------------------------------------------------------------------
# noise


def draw_reference_process(rng: np.random.Generator, marks_rng: np.random.Generator,
                           lambda_max: float, t_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Arrival times in (0, t_max] and their marks on [0, lambda_max)."""
    mean = lambda_max * t_max
    chunk = int(mean + 6.0 * math.sqrt(mean) + 16)
    parts = [np.zeros(1)]
    while parts[-1][-1] <= t_max:
        gaps = rng.standard_exponential(chunk) / lambda_max
        parts.append(np.cumsum(np.concatenate([parts[-1][-1:], gaps]))[1:])
    arrivals = np.concatenate(parts[1:])
    times = arrivals[: np.searchsorted(arrivals, t_max, side="right")]
    marks = marks_rng.random(times.size) * lambda_max
    return times, marks


def draw_wiener_normals(streams: HybridStreams, n_channels: int, n_cells: int) -> np.ndarray:
    out = np.empty((n_channels, n_cells))
    for c in range(n_channels):
        out[c] = streams.wiener(c).standard_normal(n_cells)
    return out


@dataclass
class _Noise:
    jump_times: np.ndarray
    marks: np.ndarray
    normals: np.ndarray = field(repr=False)


def _draw_noise(streams: HybridStreams, config: HybridConfig, lambda_max: float,
                n_channels: int, has_jumps: bool = True) -> _Noise:
    if has_jumps:
        times, marks = draw_reference_process(streams.arrivals, streams.marks, lambda_max, config.t_max)
    else:
        # every arrival would be thinned; skip the process so the scheme is plain Euler-Maruyama
        times, marks = np.empty(0), np.empty(0)
    n_cells = _kernels.grid_size(config.t_max, config.noise_step) + times.size
    return _Noise(times, marks, draw_wiener_normals(streams, n_channels, n_cells))


# ---------------------------------------------------------------------------
# simulation


def hybrid_simulate(
    net: ReactionNetwork,
    partition: Partition,
    s0: State | None,
    config: HybridConfig,
    streams: HybridStreams | int = 0,
    sample_grid=None,
    record_events: bool = False,
) -> Trajectory:
    """Simulate one hybrid path on [0, config.t_max].

    Samples hold the state of the most recent grid or jump point
    (cadlag).  If the total jump propensity ever exceeds ``lambda_max`` the
    run either fails or, under ``retry_doubled``, restarts from t=0 with
    doubled intensity and fresh substreams.
    """
    if not isinstance(streams, HybridStreams):
        streams = HybridStreams(streams)
    if s0 is None:
        s0 = net.initial_state()
    grid = make_sample_times(config.t_max, grid=sample_grid)
    arr = net.arrays
    lam = config.lambda_max
    retries = 0
    start = time.perf_counter()
    while True:
        noise = _draw_noise(streams, config, lam, len(partition.diffusion), bool(partition.jump))
        S = net.state_vector(s0)
        out = np.empty((grid.size, S.size))
        counts = np.zeros(len(net.reactions), dtype=np.int64)
        diag = np.zeros(3)
        ev_t = np.empty(noise.jump_times.size)
        ev_r = np.empty(noise.jump_times.size, dtype=np.int64)
        status, n_ev, t_stop = _kernels.hybrid_run(
            S, config.t_max, config.noise_step, config.stride, noise.jump_times,
            noise.marks, lam, noise.normals, partition.diffusion_idx,
            partition.d_ptr, partition.d_species, partition.d_nu,
            partition.clamp_species, partition.jump_idx, arr.rates, arr.nu, arr.react_ptr,
            arr.react_species, arr.react_order, arr.discrete,
            config.diffusion_noise, grid, out, counts, diag, ev_t, ev_r,
        )
        if status == _kernels.BOUND_EXCEEDED:
            if config.lambda_policy == "fail" or retries >= config.max_retries:
                raise IntensityBoundExceeded(net.state_from_vector(S, t_stop), float(diag[2]), lam)
            lam *= 2.0
            retries += 1
            streams = streams.next_attempt()
            continue
        if status == _kernels.IMPOSSIBLE:
            raise ImpossibleEventError(f"impossible event at t={t_stop}")
        break
    diagnostics = Diagnostics(
        events_per_reaction={r.id: int(c) for r, c in zip(net.reactions, counts)},
        thinned=int(diag[1]),
        clamps=int(diag[0]),
        retries=retries,
        lambda_max_used=lam,
        wall_time_seconds=time.perf_counter() - start,
    )
    events = None
    if record_events:
        ids = net.reaction_ids
        events = [(float(ev_t[i]), ids[ev_r[i]]) for i in range(n_ev)]
    return Trajectory(net, grid, out, diagnostics, events)


def simulate_reference(
    net: ReactionNetwork,
    partition: Partition,
    s0: State | None,
    config: HybridConfig,
    streams: HybridStreams | int = 0,
    sample_grid=None,
) -> Trajectory:
    """Slow path composed from the single-step operations above.

    Consumes exactly the same random numbers as ``hybrid_simulate`` and must
    reproduce it; used to cross-check the compiled loop.  No retry policy.
    """
    if not isinstance(streams, HybridStreams):
        streams = HybridStreams(streams)
    if s0 is None:
        s0 = net.initial_state()
    grid = make_sample_times(config.t_max, grid=sample_grid)
    lam = config.lambda_max
    noise = _draw_noise(streams, config, lam, len(partition.diffusion), bool(partition.jump))
    merged = merged_grid(0.0, config.t_max, config.noise_step, noise.jump_times)
    K = int(merged.grid_index.max())
    m = config.stride
    diag = Diagnostics(events_per_reaction={r: 0 for r in net.reaction_ids}, lambda_max_used=lam)
    state = s0
    out = np.empty((grid.size, len(net.species)))
    sp = 0
    dW = np.zeros(len(partition.diffusion))
    t_fine = t_eval = 0.0
    jump_no = 0
    events = []
    for cell, t in enumerate(merged.times[1:]):
        i = cell + 1
        if config.diffusion_noise:
            dW += math.sqrt(t - t_fine) * noise.normals[:, cell]
        t_fine = t
        k = merged.grid_index[i]
        if not (merged.is_jump[i] or (k >= 0 and (k % m == 0 or k == K))):
            continue
        while sp < grid.size and grid[sp] < t:
            out[sp] = net.state_vector(state)
            sp += 1
        state = diffusion_step(
            net, partition, state, t - t_eval, dict(zip(partition.diffusion, dW)), diag
        )
        dW[:] = 0.0
        t_eval = t
        if merged.is_jump[i]:
            layout = mark_layout(net, partition, state, lam)
            state, fired = jump_step(net, partition, state, noise.marks[jump_no], layout, diag)
            if fired is not None:
                events.append((float(t), fired))
            jump_no += 1
    while sp < grid.size:
        out[sp] = net.state_vector(state)
        sp += 1
    return Trajectory(net, grid, out, diag, events)
