"""Quickstart: integrate the five-site Lorenz 96 system and look at it.

The model du/dt + u + N(u) = F with F = -12 is strongly chaotic.  This
script builds the model, advances it with the second-order mean-reverting
scheme, and prints a few things worth knowing about the trajectory: the
auxiliary variable hugging 1, the uniform bound on |u|, and the empirical
distribution of the first coordinate.

    python demos/quickstart_lorenz96.py
"""

import numpy as np

from mrsav import (
    SchemeParams,
    StreamingHistogram,
    discrete_energy,
    energy_constants,
    init_pair,
    lorenz96_model,
    run_trajectory,
)


def main():
    model = lorenz96_model(5, -12.0)
    params = SchemeParams(dt=2.0**-10, gamma=1000.0, order="bdf2")
    rng = np.random.default_rng(42)
    u0 = rng.uniform(-15.0, 15.0, model.dim)
    state = init_pair(u0, "refined", model, params)

    print(f"Lorenz 96: J={model.dim}, F={model.forcing[0]:g}, |F| = {model.forcing_sup:.3f}")
    print(f"scheme: order-2, dt={params.dt:g}, gamma={params.gamma:g}")
    print(f"initial data: {np.round(u0, 3)}")

    hist = StreamingHistogram(-25.0, 25.0, 200)
    qs = []

    def watch(step_index, u, q):
        hist.push(float(u[0]))
        if step_index % 4096 == 0:
            qs.append((step_index * params.dt, float(u[0]), q))

    summary = run_trajectory(model, params, state, T=40.0, observers=[watch])

    consts = energy_constants(model, params)
    bound = consts.sup_norm_bound(discrete_energy(state, model, params))
    print(f"\nran {summary.n_steps} steps in {summary.wall_time:.2f} s "
          f"({summary.steps_per_second:,.0f} steps/s, plain numpy path)")
    print(f"sup |u^n| = {summary.max_norm_u:.3f}  (uniform bound {bound:.1f})")
    print(f"max |q^n - 1| over the final 10%: {summary.max_q_drift_tail:.2e}")

    print("\n   t        u_1         q - 1")
    for t, u1, q in qs:
        print(f"{t:7.1f}  {u1:9.4f}  {q - 1.0:+.3e}")

    p = hist.normalize()
    print("\ncoarse histogram of u_1 (normalized, 20 bins):")
    coarse = p.coarsened(10)
    peak = coarse.p.max()
    for center, mass in zip(coarse.bin_centers, coarse.p):
        bar = "#" * int(round(40 * mass / peak))
        print(f"{center:7.2f} {mass:7.4f} {bar}")


if __name__ == "__main__":
    main()
