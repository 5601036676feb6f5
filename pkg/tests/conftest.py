"""Shared fixtures and helpers for the mrsav test suite."""

import numpy as np
import pytest

from mrsav import init_pair, lorenz96_model
from mrsav import kernels


@pytest.fixture(scope="session")
def l96():
    return lorenz96_model(5, -12.0)


def kernel_run(model, params, u0, n_steps, init_mode="refined", bins=0, lo=-25.0, hi=25.0,
               coord=0, q_window_start=None, du_window_start=None, check_energy=False,
               consts=None, state=None):
    """Drive the compiled kernel and return state plus accumulators."""
    if state is None:
        state = init_pair(u0, init_mode, model, params)
    order = kernels.ORDER_BDF2 if params.order == "bdf2" else kernels.ORDER_BE
    u_prev, u_curr = state.u_prev.copy(), state.u_curr.copy()
    qs = np.array([state.q_prev, state.q_curr])
    counts = np.zeros(bins, dtype=np.int64)
    tails = np.zeros(2, dtype=np.int64)
    mom = np.zeros(3)
    track = kernels.new_track()
    big = n_steps + 2
    if consts is None:
        alpha = beta = source = 0.0
    else:
        alpha, beta, source = consts.alpha, consts.beta, consts.source
    status = kernels.advance_l96(
        order, u_prev, u_curr, qs, state.step_index, n_steps,
        params.dt, params.gamma, model.damping_diagonal, model.forcing,
        counts, tails, lo, hi, coord, mom, track,
        big if q_window_start is None else q_window_start,
        big if du_window_start is None else du_window_start,
        check_energy, alpha, beta, source,
    )
    assert status == -1, f"kernel diverged at step {status}"
    return {
        "u_prev": u_prev, "u_curr": u_curr, "q_prev": qs[0], "q_curr": qs[1],
        "counts": counts, "tails": tails, "mom": mom, "track": track,
    }


def random_simplex(rng, n, length, allow_zeros=False):
    """A batch of n random probability vectors of the given length."""
    raw = rng.random((n, length))
    if allow_zeros:
        raw = raw * (rng.random((n, length)) > 0.3)
        raw[np.all(raw == 0, axis=1), 0] = 1.0
    return raw / raw.sum(axis=1, keepdims=True)
