"""Self-convergence study: second order, and what spoils it.

Errors at T = 1 are measured against a dt = 2^-20 reference down a
geometric dt ladder.  Three variants:

* order-2 scheme with the Richardson-refined startup: slope 2;
* the same scheme with the crude startup u^1 = u^0: the O(dt) error
  committed at the first step drags the global order down to 1;
* the order-1 backward-Euler variant: slope 1.

    python demos/convergence_orders.py
"""

import numpy as np

from mrsav import SchemeParams, init_pair, lorenz96_model, observed_order
from mrsav.integrators import n_steps_for
from mrsav.kernels import advance_l96, new_track, ORDER_BDF2, ORDER_BE


def state_at(model, u0, dt, order, init_mode, T=1.0):
    params = SchemeParams(dt=dt, gamma=1000.0, order="bdf2" if order == ORDER_BDF2 else "be")
    state = init_pair(u0, init_mode, model, params)
    u_prev, u_curr = state.u_prev.copy(), state.u_curr.copy()
    qs = np.array([1.0, 1.0])
    z = np.zeros(0, np.int64)
    status = advance_l96(order, u_prev, u_curr, qs, 1, n_steps_for(T, dt) - 1,
                         dt, params.gamma, model.damping_diagonal, model.forcing,
                         z, np.zeros(2, np.int64), -25.0, 25.0, 0,
                         np.zeros(3), new_track(), 10**9, 10**9, False, 0.0, 0.0, 0.0)
    assert status == -1
    return u_curr


def main():
    model = lorenz96_model(5, -12.0)
    u0 = np.random.default_rng(3).uniform(-1.0, 1.0, 5)
    truth = state_at(model, u0, 2.0**-20, ORDER_BDF2, "refined")
    dts = [2.0**-k for k in range(8, 13)]

    for label, order, mode in (
        ("order-2, refined startup", ORDER_BDF2, "refined"),
        ("order-2, crude startup", ORDER_BDF2, "crude"),
        ("order-1 (backward Euler)", ORDER_BE, "refined"),
    ):
        errs = [float(np.linalg.norm(state_at(model, u0, dt, order, mode) - truth))
                for dt in dts]
        orders = observed_order(list(zip(dts, errs)))
        slope = np.polyfit(np.log2(dts), np.log2(errs), 1)[0]
        print(f"\n{label}  (least-squares slope {slope:.3f})")
        print("      dt      error     order")
        for i, (dt, err) in enumerate(zip(dts, errs)):
            o = "" if i == 0 else f"{orders[i - 1]:.3f}"
            print(f"  2^{int(np.log2(dt)):+d}  {err:.3e}   {o}")


if __name__ == "__main__":
    main()
