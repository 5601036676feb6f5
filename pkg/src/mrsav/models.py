"""Damped-driven model definitions and structural checks.

The models treated here have the form

    du/dt + A u + N(u) = F

with a symmetric positive-definite damping operator ``A``, a nonlinear
term ``N`` that conserves energy (``N(u) . u = 0``), and a constant
forcing vector ``F``.  The Lorenz 96 system is the bundled instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DampedDrivenModel",
    "AssumptionReport",
    "lorenz96_model",
    "eval_nonlinear",
    "check_assumptions",
]

# Relative tolerance for the symmetry of the damping matrix.
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class DampedDrivenModel:
    """A finite-dimensional damped-driven system du/dt + A u + N(u) = F.

    Attributes
    ----------
    dim : int
        Phase-space dimension.
    damping : ndarray, shape (dim, dim)
        The symmetric positive-definite operator A.
    coercivity : float
        Lower bound l0 > 0 with u . A u >= l0 |u|^2.
    nonlinear : callable
        Maps a state vector to N(u); must satisfy N(u) . u = 0.
    forcing : ndarray, shape (dim,)
        Constant forcing vector F.
    forcing_sup : float
        The norm |F| (F is constant in time, so the sup over time is |F|).
    """

    dim: int
    damping: np.ndarray
    coercivity: float
    nonlinear: Callable[[np.ndarray], np.ndarray]
    forcing: np.ndarray
    forcing_sup: float = field(default=-1.0)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"model dimension must be positive, got {self.dim}")
        a = np.asarray(self.damping, dtype=float)
        f = np.asarray(self.forcing, dtype=float)
        if a.shape != (self.dim, self.dim):
            raise ValueError(f"damping must be {self.dim}x{self.dim}, got shape {a.shape}")
        if f.shape != (self.dim,):
            raise ValueError(f"forcing must have length {self.dim}, got shape {f.shape}")
        if not (np.isfinite(a).all() and np.isfinite(f).all()):
            raise ValueError("damping and forcing must be finite")
        if self.coercivity <= 0.0:
            raise ValueError(f"coercivity must be positive, got {self.coercivity}")
        a.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "damping", a)
        object.__setattr__(self, "forcing", f)
        if self.forcing_sup < 0.0:
            object.__setattr__(self, "forcing_sup", float(np.linalg.norm(f)))

    @property
    def damping_diagonal(self) -> np.ndarray | None:
        """The diagonal of A if A is a diagonal matrix, else None."""
        d = np.diag(self.damping)
        if np.count_nonzero(self.damping - np.diag(d)) == 0:
            return d
        return None


@dataclass(frozen=True)
class AssumptionReport:
    """Sampled diagnostics for the structural assumptions on a model.

    All quantities are maxima/minima over the drawn sample set; the caller
    decides pass/fail thresholds.
    """

    samples: int
    radius: float
    max_skew_residual: float      # max |N(u).u| / max(1, |u|^3)
    min_coercivity_ratio: float   # min (u.Au) / |u|^2
    symmetry_defect: float        # max |A - A^T| / max(1, max|A|)
    lipschitz_ratio: float        # max |N(a)-N(b)| / |a-b| over sample pairs


def lorenz96_model(J: int, F_scalar: float) -> DampedDrivenModel:
    """Build the J-site Lorenz 96 system as a damped-driven model.

    The equations du_j/dt = (u_{j+1} - u_{j-2}) u_{j-1} - u_j + F with
    periodic indices are rewritten with A = I (so l0 = 1), constant
    forcing (F, ..., F), and

        N(u)_j = -(u_{j+1} - u_{j-2}) u_{j-1},

    which conserves energy exactly under the periodic wrap.
    """
    if J < 4:
        raise ValueError(f"Lorenz 96 needs J >= 4 so the coupled sites are distinct, got J={J}")

    def nonlinear(u: np.ndarray) -> np.ndarray:
        return -(np.roll(u, -1) - np.roll(u, 2)) * np.roll(u, 1)

    return DampedDrivenModel(
        dim=J,
        damping=np.eye(J),
        coercivity=1.0,
        nonlinear=nonlinear,
        forcing=np.full(J, float(F_scalar)),
    )


def eval_nonlinear(model: DampedDrivenModel, u: np.ndarray) -> np.ndarray:
    """Evaluate N(u), validating shape and finiteness of the input."""
    u = np.asarray(u, dtype=float)
    if u.shape != (model.dim,):
        raise ValueError(f"state must have length {model.dim}, got shape {u.shape}")
    if not np.isfinite(u).all():
        raise ValueError("state vector contains non-finite entries")
    return model.nonlinear(u)


def check_assumptions(
    model: DampedDrivenModel,
    samples: int = 1000,
    radius: float = 15.0,
    seed: int = 0,
) -> AssumptionReport:
    """Probe the structural assumptions on random states.

    Draws ``samples`` points uniform in [-radius, radius]^dim and reports
    the worst observed skew residual of N, coercivity ratio of A, symmetry
    defect of A, and an empirical local Lipschitz ratio of N over
    consecutive sample pairs.  Report only; no thresholds applied here.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-radius, radius, size=(samples, model.dim))

    max_skew = 0.0
    min_coercive = np.inf
    max_lipschitz = 0.0
    prev_u = None
    prev_n = None
    for u in pts:
        nu = model.nonlinear(u)
        norm_u = float(np.linalg.norm(u))
        max_skew = max(max_skew, abs(float(nu @ u)) / max(1.0, norm_u**3))
        if norm_u > 0.0:
            min_coercive = min(min_coercive, float(u @ model.damping @ u) / norm_u**2)
        if prev_u is not None:
            gap = float(np.linalg.norm(u - prev_u))
            if gap > 0.0:
                max_lipschitz = max(max_lipschitz, float(np.linalg.norm(nu - prev_n)) / gap)
        prev_u, prev_n = u, nu

    defect = float(np.abs(model.damping - model.damping.T).max())
    scale = max(1.0, float(np.abs(model.damping).max()))
    return AssumptionReport(
        samples=samples,
        radius=radius,
        max_skew_residual=max_skew,
        min_coercivity_ratio=float(min_coercive),
        symmetry_defect=defect / scale,
        lipschitz_ratio=max_lipschitz,
    )
