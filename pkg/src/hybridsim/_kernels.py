"""Compiled inner loops for the exact and hybrid engines.

All randomness is drawn outside the kernels (numpy Generators, one per
substream) and handed in as arrays, so the kernels are deterministic
functions of their inputs.  The pure-Python operations in ``exact`` and
``hybrid`` define the semantics; these loops must agree with them.
"""

import math

import numpy as np
from numba import njit

# status codes
DONE = 0
EXHAUSTED = 1
NEED_MORE = 2
IMPOSSIBLE = 3
BOUND_EXCEEDED = 4


@njit(cache=True, inline="always")
def propensity(S, r, rates, ptr, species, order):
    w = 1.0
    for q in range(ptr[r], ptr[r + 1]):
        n = S[species[q]]
        if n < 0.0:
            n = 0.0
        k = order[q]
        if k == 1:
            w *= n
        else:
            if n - (k - 1) <= 0.0:
                return 0.0
            f = 1.0
            fact = 1.0
            for j in range(k):
                f *= n - j
                fact *= j + 1
            w *= f / fact
    return rates[r] * w


@njit(cache=True)
def grid_size(span, h):
    """Number of grid points after t0 on ``t0, t0+h, ..., t1``.

    The last point is ``t1`` itself; a tail shorter than 1e-9*h is absorbed.
    """
    n = int(math.floor(span / h + 1e-9))
    if span - n * h > 1e-9 * h:
        n += 1
    return n


@njit(cache=True)
def _record(S, t_limit, inclusive, sample_times, out, sp):
    while sp < sample_times.shape[0]:
        s = sample_times[sp]
        if s < t_limit or (inclusive and s <= t_limit):
            out[sp, :] = S
            sp += 1
        else:
            break
    return sp


@njit(cache=True, error_model="numpy")
def ssa_run(S, t, t_max, rates, nu, ptr, species, order, discrete,
            uniforms, pos, sample_times, out, sp, counts,
            ev_t, ev_r, n_ev, record_events):
    """Gillespie direct method.  Each event consumes two uniforms.

    Returns (status, t, pos, sp, n_ev); S, out, counts, ev_* are updated
    in place.  On NEED_MORE the caller refills ``uniforms`` (or grows the
    event buffers) and calls again with the returned cursors.
    """
    n_r = rates.shape[0]
    n_s = S.shape[0]
    a = np.empty(n_r)
    while True:
        a0 = 0.0
        for r in range(n_r):
            a[r] = propensity(S, r, rates, ptr, species, order)
            a0 += a[r]
        if a0 <= 0.0:
            sp = _record(S, t_max, True, sample_times, out, sp)
            return EXHAUSTED, t, pos, sp, n_ev
        if pos + 2 > uniforms.shape[0] or (record_events and n_ev >= ev_t.shape[0]):
            return NEED_MORE, t, pos, sp, n_ev
        u1 = uniforms[pos]
        u2 = uniforms[pos + 1]
        pos += 2
        t_next = t - math.log(1.0 - u1) / a0
        if t_next > t_max:
            sp = _record(S, t_max, True, sample_times, out, sp)
            return DONE, t_max, pos, sp, n_ev
        if sp < sample_times.shape[0] and sample_times[sp] < t_next:
            sp = _record(S, t_next, False, sample_times, out, sp)
        target = u2 * a0
        acc = 0.0
        fired = -1
        for r in range(n_r):
            if a[r] > 0.0:
                fired = r
                acc += a[r]
                if target < acc:
                    break
        for i in range(n_s):
            S[i] += nu[fired, i]
            if discrete[i] and S[i] < 0.0:
                return IMPOSSIBLE, t_next, pos, sp, n_ev
        counts[fired] += 1
        if record_events:
            ev_t[n_ev] = t_next
            ev_r[n_ev] = fired
            n_ev += 1
        t = t_next


@njit(cache=True, error_model="numpy")
def hybrid_run(S, t_max, h_noise, stride, jump_times, marks, lambda_max,
               normals, diff_idx, d_ptr, d_species, d_nu, clamp_species,
               jump_idx, rates, nu, ptr, species, order, discrete, noise_on,
               sample_times, out, counts, diag, ev_t, ev_r):
    """Jump-diffusion scheme on the merged grid.

    The fine grid ``k*h_noise`` merged with ``jump_times`` defines the noise
    cells: cell i of channel c gets increment sqrt(len_i)*normals[c, i].
    Diffusion is evaluated at every ``stride``-th fine point, at the final
    time and at every jump; noise accumulated since the last evaluation
    is the Wiener increment of that step.  At a jump the diffusion update
    comes first, then the mark is classified against the cumulative jump
    propensities at (post-diffusion X, previous sigma).

    ``d_ptr/d_species/d_nu`` list the nonzero net stoichiometry of each
    diffusion channel; ``clamp_species`` are the continuous species they
    touch.  ``diag`` holds [clamps, thinned, bound-violating total].
    Returns (status, n_events, t_at_status).
    """
    n_s = S.shape[0]
    n_d = diff_idx.shape[0]
    n_j = jump_idx.shape[0]
    n_jumps = jump_times.shape[0]
    n_samples = sample_times.shape[0]
    K = grid_size(t_max, h_noise)
    tol = 1e-12 * t_max
    dW = np.zeros(n_d)
    a = np.empty(n_d)
    bounds = np.empty(n_j + 1)
    j = 0
    cell = 0
    t_fine = 0.0
    t_eval = 0.0
    sp = 0
    n_ev = 0
    phase = 0  # k mod stride, kept incrementally
    for k in range(1, K + 1):
        tg = t_max if k == K else k * h_noise
        phase += 1
        if phase == stride:
            phase = 0
        while True:
            is_jump = j < n_jumps and jump_times[j] <= tg + tol
            if is_jump and tg - jump_times[j] > tol:
                t = jump_times[j]
                is_grid = False
            else:
                t = tg
                is_grid = True
            if noise_on:
                sq = math.sqrt(t - t_fine)
                for c in range(n_d):
                    dW[c] += sq * normals[c, cell]
            cell += 1
            t_fine = t
            if is_jump or (is_grid and (phase == 0 or k == K)):
                if sp < n_samples and sample_times[sp] < t:
                    sp = _record(S, t, False, sample_times, out, sp)
                # Euler-Maruyama step, propensities at the pre-step state
                dt = t - t_eval
                for c in range(n_d):
                    a[c] = propensity(S, diff_idx[c], rates, ptr, species, order)
                for c in range(n_d):
                    ac = a[c]
                    incr = ac * dt + math.sqrt(ac if ac > 0.0 else 0.0) * dW[c]
                    for q in range(d_ptr[c], d_ptr[c + 1]):
                        S[d_species[q]] += d_nu[q] * incr
                    dW[c] = 0.0
                for q in range(clamp_species.shape[0]):
                    i = clamp_species[q]
                    if S[i] < 0.0:
                        S[i] = 0.0
                        diag[0] += 1.0
                t_eval = t
            if is_jump:
                # thinning against the cumulative jump propensities
                bounds[0] = 0.0
                for q in range(n_j):
                    bounds[q + 1] = bounds[q] + propensity(S, jump_idx[q], rates, ptr, species, order)
                if bounds[n_j] > lambda_max * (1.0 + 1e-12):
                    diag[2] = bounds[n_j]
                    return BOUND_EXCEEDED, n_ev, t
                z = marks[j]
                fired = -1
                for q in range(n_j):
                    if bounds[q] <= z and z < bounds[q + 1]:
                        fired = jump_idx[q]
                        break
                if fired < 0:
                    diag[1] += 1.0
                else:
                    for i in range(n_s):
                        if nu[fired, i] != 0.0:
                            S[i] += nu[fired, i]
                            if discrete[i] and S[i] < 0.0:
                                return IMPOSSIBLE, n_ev, t
                    counts[fired] += 1
                    ev_t[n_ev] = t
                    ev_r[n_ev] = fired
                    n_ev += 1
                j += 1
            if is_grid:
                break
    _record(S, t_max, True, sample_times, out, sp)
    return DONE, n_ev, t_max
