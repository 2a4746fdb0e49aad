"""Exact stochastic simulation (Gillespie direct method) and a brute-force
master-equation solver used as a test oracle on tiny networks."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import _kernels
from .errors import ImpossibleEventError, StateSpaceError
from .network import ReactionNetwork, State, propensities
from .trajectory import Diagnostics, Trajectory, sample_times as make_sample_times


def ssa_step(net: ReactionNetwork, state: State, rng: np.random.Generator):
    """One direct-method step: ``(dt, reaction_id)``, or ``None`` when every
    propensity is zero.

    Draws two uniforms per step, in the same order the compiled loop uses.
    """
    a = propensities(net, state)
    a0 = 0.0
    for v in a:
        a0 += v
    if a0 <= 0.0:
        return None
    u1, u2 = rng.random(2)
    dt = -math.log(1.0 - u1) / a0
    target = u2 * a0
    acc = 0.0
    fired = -1
    for r, v in enumerate(a):
        if v > 0.0:
            fired = r
            acc += v
            if target < acc:
                break
    return dt, net.reactions[fired].id


def ssa_simulate(
    net: ReactionNetwork,
    s0: State | None,
    t_max: float,
    rng: np.random.Generator,
    sample_grid=None,
    record_events: bool = False,
) -> Trajectory:
    """Run the exact process on [0, t_max].

    ``sample_grid`` defaults to {0, t_max}.  Uniforms are pulled from ``rng``
    in chunks; the draw sequence equals repeated ``ssa_step`` calls.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if s0 is None:
        s0 = net.initial_state()
    grid = make_sample_times(t_max, grid=sample_grid)
    arr = net.arrays
    S = net.state_vector(s0)
    out = np.empty((grid.size, S.size))
    counts = np.zeros(len(net.reactions), dtype=np.int64)
    ev_t = np.empty(1024 if record_events else 0)
    ev_r = np.empty(ev_t.size, dtype=np.int64)
    chunk = 256
    uniforms = np.empty(0)
    pos = sp = n_ev = 0
    t = 0.0
    start = time.perf_counter()
    while True:
        status, t, pos, sp, n_ev = _kernels.ssa_run(
            S, t, t_max, arr.rates, arr.nu, arr.react_ptr, arr.react_species,
            arr.react_order, arr.discrete, uniforms, pos, grid, out, sp, counts,
            ev_t, ev_r, n_ev, record_events,
        )
        if status == _kernels.NEED_MORE:
            if pos + 2 > uniforms.size:
                uniforms = np.concatenate([uniforms[pos:], rng.random(chunk)])
                pos = 0
                chunk = min(chunk * 2, 1 << 16)
            if record_events and n_ev >= ev_t.size:
                ev_t = np.concatenate([ev_t, np.empty(ev_t.size)])
                ev_r = np.concatenate([ev_r, np.empty(ev_r.size, dtype=np.int64)])
            continue
        if status == _kernels.IMPOSSIBLE:
            raise ImpossibleEventError(f"impossible event at t={t}")
        break
    diag = Diagnostics(
        events_per_reaction={r.id: int(c) for r, c in zip(net.reactions, counts)},
        wall_time_seconds=time.perf_counter() - start,
    )
    events = None
    if record_events:
        ids = net.reaction_ids
        events = [(float(ev_t[i]), ids[ev_r[i]]) for i in range(n_ev)]
    return Trajectory(net, grid, out, diag, events)


# ---------------------------------------------------------------------------
# master-equation oracle


@dataclass
class CMEResult:
    states: np.ndarray  # (n_states, n_species) integer counts
    probabilities: np.ndarray
    leakage: float
    steps: int

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(v) for v in s): float(p) for s, p in zip(self.states, self.probabilities)}


def _box_states(caps: np.ndarray) -> np.ndarray:
    grids = np.indices(tuple(int(c) + 1 for c in caps)).reshape(len(caps), -1).T
    return grids.astype(np.int64)


def _weights(states: np.ndarray, net: ReactionNetwork) -> np.ndarray:
    out = np.empty((len(net.reactions), states.shape[0]))
    for j, r in enumerate(net.reactions):
        w = np.full(states.shape[0], r.rate)
        for name, k in r.reactants.items():
            n = states[:, net.species_index[name]].astype(float)
            f = np.ones_like(n)
            for q in range(k):
                f *= n - q
            w *= np.where(n >= k, f / math.factorial(k), 0.0)
        out[j] = w
    return out


def generator_matrix(net: ReactionNetwork, caps) -> tuple[np.ndarray, sparse.csr_matrix]:
    """Truncated CME generator Q with dP/dt = Q P on the box [0, caps].

    Transitions leaving the box keep their outflow on the diagonal, so
    probability leaks instead of piling up at the boundary.
    """
    caps = np.asarray(caps, dtype=np.int64)
    states = _box_states(caps)
    n = states.shape[0]
    radix = np.cumprod(np.concatenate([[1], (caps + 1)[::-1][:-1]]))[::-1]
    a = _weights(states, net)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    nu = net.arrays.nu.astype(np.int64)
    for j in range(len(net.reactions)):
        active = a[j] > 0
        diag[active] -= a[j][active]
        target = states + nu[j]
        inside = active & np.all((target >= 0) & (target <= caps), axis=1)
        src = np.nonzero(inside)[0]
        dst = target[inside] @ radix
        rows.append(dst)
        cols.append(src)
        vals.append(a[j][inside])
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    Q = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return states, Q


def _rk4(Q, p0: np.ndarray, t: float, steps: int) -> np.ndarray:
    p = p0.copy()
    dt = t / steps
    for _ in range(steps):
        k1 = Q @ p
        k2 = Q @ (p + 0.5 * dt * k1)
        k3 = Q @ (p + 0.5 * dt * k2)
        k4 = Q @ (p + dt * k3)
        p = p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


def cme_distribution(
    net: ReactionNetwork,
    s0: State | None,
    t: float,
    state_cap,
    leakage_tol: float = 1e-6,
    max_states: int = 100_000,
    rtol: float = 1e-8,
) -> CMEResult:
    """Distribution of the jump process at time ``t`` on a capped state box.

    Every species is treated as an integer count.  Fixed-step RK4 is
    refined by halving until two successive results differ by less than
    ``rtol`` (max norm).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    n_species = len(net.species)
    caps = np.broadcast_to(np.asarray(state_cap, dtype=np.int64), (n_species,))
    n_states = int(np.prod(caps + 1))
    if n_states > max_states:
        raise StateSpaceError(f"state space too large: {n_states} > {max_states}")
    if s0 is None:
        s0 = net.initial_state()
    start = np.rint(net.state_vector(s0)).astype(np.int64)
    if np.any(start > caps):
        raise StateSpaceError("initial state outside the capped box")
    states, Q = generator_matrix(net, caps)
    radix = np.cumprod(np.concatenate([[1], (caps + 1)[::-1][:-1]]))[::-1]
    p0 = np.zeros(states.shape[0])
    p0[int(start @ radix)] = 1.0
    if t == 0:
        return CMEResult(states, p0, 0.0, 0)
    rate = float(np.max(-Q.diagonal())) if Q.nnz else 0.0
    steps = max(1, int(math.ceil(t * max(rate, 1e-12))))
    p = _rk4(Q, p0, t, steps)
    while True:
        steps *= 2
        finer = _rk4(Q, p0, t, steps)
        if np.max(np.abs(finer - p)) < rtol:
            p = finer
            break
        p = finer
        if steps > 1 << 22:
            raise StateSpaceError("CME integration did not converge")
    leakage = max(0.0, 1.0 - float(p.sum()))
    if leakage > leakage_tol:
        raise StateSpaceError(f"probability leakage {leakage:.3g} exceeds tolerance {leakage_tol:.3g}")
    return CMEResult(states, p, leakage, steps)
