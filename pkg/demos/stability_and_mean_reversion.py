"""Unconditional stability and the mean-reverting auxiliary variable.

Two selling points of the scheme, demonstrated by abuse:

1. start from initial data of norm 1000 and take time steps up to dt = 4;
   the discrete energy envelope (1 + b dt) E^{n+1} <= E^n + source dt is
   verified at every single step and |u| contracts into the absorbing ball;
2. the auxiliary variable q returns to 1 and stays within O(dt) of it,
   and the drift shrinks when dt does.

    python demos/stability_and_mean_reversion.py
"""

import warnings

import numpy as np

from mrsav import SchemeParams, energy_constants, init_pair, lorenz96_model
from mrsav.kernels import advance_l96, new_track, ORDER_BDF2


def kernel_probe(model, params, u0, n_steps, check_energy, q_window_start):
    state = init_pair(u0, "crude")
    consts = energy_constants(model, params)
    u_prev, u_curr = state.u_prev.copy(), state.u_curr.copy()
    qs = np.array([1.0, 1.0])
    counts = np.zeros(0, np.int64)
    tails = np.zeros(2, np.int64)
    mom = np.zeros(3)
    track = new_track()
    status = advance_l96(ORDER_BDF2, u_prev, u_curr, qs, 1, n_steps,
                         params.dt, params.gamma, model.damping_diagonal, model.forcing,
                         counts, tails, -25.0, 25.0, 0, mom, track,
                         q_window_start, n_steps + 2,
                         check_energy, consts.alpha, consts.beta, consts.source)
    assert status == -1
    return track


def main():
    model = lorenz96_model(5, -12.0)
    rng = np.random.default_rng(7)
    u0 = rng.standard_normal(5)
    u0 *= 1000.0 / np.linalg.norm(u0)
    print(f"hostile initial data: |u0| = {np.linalg.norm(u0):.1f}")

    print("\nenergy envelope, 200,000 steps each:")
    print("      dt   violations   sup |u^n|   min B^n")
    for dt in (4.0, 1.0, 2.0**-4, 2.0**-10):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # dt > 1 warns on purpose
            params = SchemeParams(dt=dt, gamma=1000.0)
        track = kernel_probe(model, params, u0, 200_000, True, 10**9)
        print(f"{dt:8g}   {int(track[4]):10d}   {track[0]:9.1f}   {track[2]:.6f}")

    print("\nmean reversion: max |q - 1| after burn-in T=50, window [50, 100]:")
    u0_mild = rng.uniform(-15.0, 15.0, 5)
    print("      dt    max |q-1|   drift / dt")
    for k in (6, 8, 10, 12):
        dt = 2.0**-k
        params = SchemeParams(dt=dt, gamma=1000.0)
        n = int(round(100.0 / dt))
        track = kernel_probe(model, params, u0_mild, n, False, 1 + int(round(50.0 / dt)))
        print(f"  2^-{k:<3d}  {track[1]:.3e}   {track[1] / dt:8.4f}")


if __name__ == "__main__":
    main()
