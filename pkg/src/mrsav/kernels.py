"""Compiled hot loops for Lorenz 96 runs with diagonal damping.

The long-statistics experiments take 1e8+ steps, so the stepping,
histogram accumulation, running moments, and invariant tracking are
fused into one numba kernel.  The kernel carries no hidden state: the
pair state and every accumulator live in caller-owned arrays, which
makes segmented runs (snapshots, checkpoints) bitwise identical to
uninterrupted ones.

Validation-style residual checks are deliberately absent here; use the
plain-numpy steppers in `integrators` when auditing a trajectory.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .models import DampedDrivenModel

__all__ = ["TRACK_SLOTS", "advance_l96", "fast_path_ok", "new_track"]

# track array layout
TRACK_MAX_NORM_U = 0   # max |u^n| (Euclidean) over all steps
TRACK_MAX_Q_DRIFT = 1  # max |q^n - 1| for steps >= q_window_start
TRACK_MIN_B = 2        # min B^n over all steps
TRACK_MAX_DU = 3       # max |u^{n+1} - u^n| for steps >= du_window_start
TRACK_ENERGY_VIOL = 4  # count of per-step energy envelope violations
TRACK_ENERGY_EXCESS = 5  # worst relative envelope excess
TRACK_SLOTS = 6

ORDER_BDF2 = 2
ORDER_BE = 1


def new_track() -> np.ndarray:
    t = np.zeros(TRACK_SLOTS)
    t[TRACK_MIN_B] = np.inf
    return t


@njit(cache=True)
def _energy(u_prev, u_curr, q_prev, q_curr, alpha_dt):
    a = 0.0
    b = 0.0
    c = 0.0
    for i in range(u_curr.shape[0]):
        a += u_prev[i] * u_prev[i]
        b += u_prev[i] * u_curr[i]
        c += u_curr[i] * u_curr[i]
    e = 0.25 * (a - 4.0 * b + 5.0 * c) + alpha_dt * c
    e += 0.25 * (q_prev * q_prev - 4.0 * q_prev * q_curr + 5.0 * q_curr * q_curr)
    e += alpha_dt * q_curr * q_curr
    return e


@njit(cache=True)
def advance_l96(order, u_prev, u_curr, qs, step0, n_steps,
                dt, gamma, adiag, f,
                counts, tails, lo, hi, coord,
                mom, track, q_window_start, du_window_start,
                check_energy, alpha, beta, source):
    """Advance the Lorenz 96 SAV scheme n_steps, mutating state in place.

    ``u_prev``/``u_curr`` and ``qs = [q_prev, q_curr]`` hold the pair
    state for global step ``step0`` on entry and ``step0 + n_steps`` on
    return.  Each new sample u[coord] is pushed into ``counts``/``tails``
    (skipped when counts is empty) and into the Welford accumulator
    ``mom = [count, mean, m2]``.  Returns -1, or the global step index of
    the first non-finite value.
    """
    J = u_curr.shape[0]
    ip1 = np.empty(J, np.int64)
    im1 = np.empty(J, np.int64)
    im2 = np.empty(J, np.int64)
    for i in range(J):
        ip1[i] = (i + 1) % J
        im1[i] = (i - 1) % J
        im2[i] = (i - 2) % J

    e = np.empty(J)
    w = np.empty(J)
    g = np.empty(J)
    u_next = np.empty(J)
    shift = 1.5 if order == ORDER_BDF2 else 1.0
    minv = np.empty(J)
    for i in range(J):
        minv[i] = 1.0 / (shift + dt * adiag[i])
    s = 1.0 / (shift + dt * gamma)
    nbins = counts.shape[0]
    width = (hi - lo) / nbins if nbins > 0 else 1.0
    alpha_dt = alpha * dt
    envelope_gain = 1.0 + beta * dt
    envelope_input = source * dt
    energy = 0.0
    if check_energy:
        energy = _energy(u_prev, u_curr, qs[0], qs[1], alpha_dt)

    for n in range(n_steps):
        if order == ORDER_BDF2:
            for i in range(J):
                e[i] = 2.0 * u_curr[i] - u_prev[i]
        else:
            for i in range(J):
                e[i] = u_curr[i]
        quad = 0.0
        for i in range(J):
            w[i] = -(e[ip1[i]] - e[im2[i]]) * e[im1[i]]
            quad += w[i] * w[i] * minv[i]
        wg = 0.0
        if order == ORDER_BDF2:
            for i in range(J):
                g[i] = minv[i] * (0.5 * (4.0 * u_curr[i] - u_prev[i]) + dt * f[i])
                wg += w[i] * g[i]
        else:
            for i in range(J):
                g[i] = minv[i] * (u_curr[i] + dt * f[i])
                wg += w[i] * g[i]
        b = 1.0 + dt * dt * s * quad
        if b < track[TRACK_MIN_B]:
            track[TRACK_MIN_B] = b
        if order == ORDER_BDF2:
            q_next = (s / b) * (0.5 * (4.0 * qs[1] - qs[0]) + dt * gamma + dt * wg)
        else:
            q_next = (s / b) * (qs[1] + dt * gamma + dt * wg)
        ok = np.isfinite(q_next)
        norm_sq = 0.0
        du_sq = 0.0
        for i in range(J):
            u_next[i] = g[i] - dt * q_next * minv[i] * w[i]
            ok = ok and np.isfinite(u_next[i])
            norm_sq += u_next[i] * u_next[i]
            d = u_next[i] - u_curr[i]
            du_sq += d * d
        step_index = step0 + n + 1
        if not ok:
            return step_index

        if check_energy:
            energy_next = _energy(u_curr, u_next, qs[1], q_next, alpha_dt)
            lhs = envelope_gain * energy_next
            rhs = energy + envelope_input
            excess = lhs - rhs
            tol = 1e-12 * (rhs if rhs > 1.0 else 1.0)
            if excess > tol:
                track[TRACK_ENERGY_VIOL] += 1.0
                rel = excess / (rhs if rhs > 1.0 else 1.0)
                if rel > track[TRACK_ENERGY_EXCESS]:
                    track[TRACK_ENERGY_EXCESS] = rel
            energy = energy_next

        norm = np.sqrt(norm_sq)
        if norm > track[TRACK_MAX_NORM_U]:
            track[TRACK_MAX_NORM_U] = norm
        if step_index >= q_window_start:
            drift = abs(q_next - 1.0)
            if drift > track[TRACK_MAX_Q_DRIFT]:
                track[TRACK_MAX_Q_DRIFT] = drift
        if step_index >= du_window_start:
            du = np.sqrt(du_sq)
            if du > track[TRACK_MAX_DU]:
                track[TRACK_MAX_DU] = du

        for i in range(J):
            u_prev[i] = u_curr[i]
            u_curr[i] = u_next[i]
        qs[0] = qs[1]
        qs[1] = q_next

        x = u_curr[coord]
        if nbins > 0:
            if x < lo:
                tails[0] += 1
            elif x > hi:
                tails[1] += 1
            else:
                idx = np.int64((x - lo) / width)
                if idx >= nbins:
                    idx = nbins - 1
                counts[idx] += 1
        mom[0] += 1.0
        d0 = x - mom[1]
        mom[1] += d0 / mom[0]
        mom[2] += d0 * (x - mom[1])

    return -1


def fast_path_ok(model: DampedDrivenModel, probes: int = 4, seed: int = 1234) -> bool:
    """True if the model is eligible for the compiled Lorenz 96 path.

    Requires diagonal damping and a nonlinearity that matches the cyclic
    Lorenz 96 advection formula exactly on random probe vectors.
    """
    if model.damping_diagonal is None or model.dim < 4:
        return False
    rng = np.random.default_rng(seed)
    for _ in range(probes):
        u = rng.uniform(-20.0, 20.0, model.dim)
        expected = -(np.roll(u, -1) - np.roll(u, 2)) * np.roll(u, 1)
        if not np.array_equal(model.nonlinear(u), expected):
            return False
    return True
