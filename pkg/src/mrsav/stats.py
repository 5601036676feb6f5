"""Streaming empirical-measure statistics and distribution distances.

Conventions used throughout (they change the numbers, so they are fixed
here once):

* entropies are in nats (natural log);
* total variation carries the probabilist's 1/2 factor,
  TV(P, Q) = 1/2 sum |p_i - q_i|, so Pinsker reads TV <= sqrt(KL/2);
* KL returns +inf when absolute continuity fails (p > 0 where q = 0);
* moment accumulators use the population variance (divide by count).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "StreamingHistogram",
    "ProbVector",
    "RunningMoments",
    "DistanceReport",
    "kl_divergence",
    "js_divergence",
    "tv_distance",
    "distance_report",
    "moving_average",
    "coarsen",
    "observed_order",
]

LN2 = math.log(2.0)

PVEC_MAGIC = b"PVEC"
PVEC_VERSION = 1
_PVEC_HEADER = struct.Struct("<4sIQdd")  # magic, version, N, lo, hi


class StreamingHistogram:
    """Fixed-range, equal-width bin counts accumulated online.

    Values land in bin floor((x - lo) / width); the x == hi edge is
    clamped into the last bin.  Out-of-range values go to the ``under``
    and ``over`` tail counters, never lost, so
    ``sum(counts) + under + over == total`` always holds.
    """

    def __init__(self, lo: float, hi: float, bins: int):
        if not (lo < hi):
            raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
        if bins < 1:
            raise ValueError(f"bins must be positive, got {bins}")
        self.lo = float(lo)
        self.hi = float(hi)
        self.counts = np.zeros(bins, dtype=np.int64)
        self.under = 0
        self.over = 0

    @property
    def bins(self) -> int:
        return self.counts.shape[0]

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.bins

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.under + self.over

    def push(self, x: float):
        """Add one sample."""
        if math.isnan(x):
            raise ValueError("cannot push NaN into a histogram")
        if x < self.lo:
            self.under += 1
        elif x > self.hi:
            self.over += 1
        else:
            idx = int(math.floor((x - self.lo) / self.width))
            if idx >= self.bins:
                idx = self.bins - 1
            self.counts[idx] += 1

    def push_many(self, xs: np.ndarray):
        """Vectorized push; same bin convention as push()."""
        xs = np.asarray(xs, dtype=float)
        if np.isnan(xs).any():
            raise ValueError("cannot push NaN into a histogram")
        self.under += int((xs < self.lo).sum())
        self.over += int((xs > self.hi).sum())
        inside = xs[(xs >= self.lo) & (xs <= self.hi)]
        idx = np.floor((inside - self.lo) / self.width).astype(np.int64)
        np.clip(idx, 0, self.bins - 1, out=idx)
        np.add.at(self.counts, idx, 1)

    def merge(self, other: "StreamingHistogram"):
        """Absorb another histogram over the identical binning."""
        if (other.lo, other.hi, other.bins) != (self.lo, self.hi, self.bins):
            raise ValueError("histograms have different binnings")
        self.counts += other.counts
        self.under += other.under
        self.over += other.over

    def normalize(self, include_tails: bool = False) -> "ProbVector":
        """Empirical probability vector over the bins.

        With ``include_tails`` the under/over counts are folded into the
        first/last bins before dividing by the grand total; otherwise the
        in-range counts are divided by their own sum.
        """
        if self.total == 0:
            raise ValueError("cannot normalize an empty histogram")
        c = self.counts.astype(float)
        if include_tails:
            c[0] += self.under
            c[-1] += self.over
            denom = self.total
        else:
            denom = c.sum()
            if denom == 0:
                raise ValueError("all samples fell outside the histogram range")
        return ProbVector(c / denom, self.lo, self.hi)


@dataclass
class ProbVector:
    """A discrete probability vector over equal-width bins on [lo, hi]."""

    p: np.ndarray
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1:
            raise ValueError("probability vector must be one-dimensional")
        if np.isnan(p).any():
            raise ValueError("probability vector contains NaN")
        if (p < 0).any():
            raise ValueError("probabilities must be nonnegative")
        total = p.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1, got {total!r}")
        self.p = p

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.p, dtype=dtype)

    def __len__(self) -> int:
        return len(self.p)

    @property
    def bin_centers(self) -> np.ndarray:
        width = (self.hi - self.lo) / len(self.p)
        return self.lo + width * (np.arange(len(self.p)) + 0.5)

    def smoothed(self, window: int) -> "ProbVector":
        return ProbVector(moving_average(self.p, window), self.lo, self.hi)

    def coarsened(self, factor: int) -> "ProbVector":
        return ProbVector(coarsen(self.p, factor), self.lo, self.hi)

    # --- portable containers -------------------------------------------------

    def to_bytes(self) -> bytes:
        header = _PVEC_HEADER.pack(PVEC_MAGIC, PVEC_VERSION, len(self.p), self.lo, self.hi)
        return header + self.p.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ProbVector":
        if len(blob) < _PVEC_HEADER.size:
            raise ValueError("truncated probability container")
        magic, version, n, lo, hi = _PVEC_HEADER.unpack_from(blob)
        if magic != PVEC_MAGIC:
            raise ValueError(f"bad magic {magic!r}, not a probability container")
        if version != PVEC_VERSION:
            raise ValueError(f"unsupported container version {version}")
        payload = blob[_PVEC_HEADER.size:]
        if len(payload) != 8 * n:
            raise ValueError("probability container payload has wrong length")
        p = np.frombuffer(payload, dtype="<f8").astype(float)
        return cls(p, lo, hi)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ProbVector":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("bin_center,probability\n")
            for center, prob in zip(self.bin_centers, self.p):
                fh.write(f"{float(center)!r},{float(prob)!r}\n")


@dataclass
class RunningMoments:
    """Single-pass mean/variance accumulator (Welford), mergeable.

    Variance is the population variance m2 / count.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, x: float):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def push_many(self, xs: np.ndarray):
        for x in np.asarray(xs, dtype=float):
            self.push(float(x))

    @property
    def variance(self) -> float:
        if self.count == 0:
            return float("nan")
        return self.m2 / self.count

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        """Combined accumulator equal to accumulating the concatenation."""
        if other.count == 0:
            return RunningMoments(self.count, self.mean, self.m2)
        if self.count == 0:
            return RunningMoments(other.count, other.mean, other.m2)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningMoments(n, mean, m2)


@dataclass(frozen=True)
class DistanceReport:
    """JS/KL/TV distances between two distributions, with a Pinsker check."""

    js: float
    kl_pq: float
    kl_qp: float
    tv: float
    pinsker_ok: bool


def _as_prob_pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return p, q


def kl_divergence(p, q) -> float:
    """KL(P || Q) in nats; 0 log(0/q) = 0; +inf when P escapes Q's support."""
    p, q = _as_prob_pair(p, q)
    mask = p > 0
    if (q[mask] == 0).any():
        return float("inf")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats: always finite, symmetric, in [0, ln 2]."""
    p, q = _as_prob_pair(p, q)
    m = 0.5 * (p + q)
    return 0.5 * (kl_divergence(p, m) + kl_divergence(q, m))


def tv_distance(p, q) -> float:
    """Total variation distance 1/2 sum |p_i - q_i|, in [0, 1]."""
    p, q = _as_prob_pair(p, q)
    return 0.5 * float(np.abs(p - q).sum())


def distance_report(p, q) -> DistanceReport:
    kl_pq = kl_divergence(p, q)
    tv = tv_distance(p, q)
    pinsker = True if math.isinf(kl_pq) else tv <= math.sqrt(kl_pq / 2.0) + 1e-12
    return DistanceReport(
        js=js_divergence(p, q),
        kl_pq=kl_pq,
        kl_qp=kl_divergence(q, p),
        tv=tv,
        pinsker_ok=pinsker,
    )


def moving_average(p, window: int) -> np.ndarray:
    """Centered boxcar smoothing of a probability vector.

    The window wraps cyclically at the edges, which keeps the uniform
    vector a fixed point and preserves total mass; the result is
    renormalized to sum exactly to 1.
    """
    p = np.asarray(p, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be an odd positive integer, got {window}")
    if window > len(p):
        raise ValueError(f"window {window} exceeds vector length {len(p)}")
    if window == 1:
        return p.copy()
    half = window // 2
    padded = np.concatenate([p[-half:], p, p[:half]])
    kernel = np.full(window, 1.0 / window)
    out = np.convolve(padded, kernel, mode="valid")
    return out / out.sum()


def coarsen(p, factor: int) -> np.ndarray:
    """Merge adjacent groups of ``factor`` bins by summation (mass preserving)."""
    p = np.asarray(p, dtype=float)
    if factor < 1:
        raise ValueError(f"factor must be positive, got {factor}")
    if len(p) % factor != 0:
        raise ValueError(f"length {len(p)} is not divisible by factor {factor}")
    if factor == 1:
        return p.copy()
    return p.reshape(len(p) // factor, factor).sum(axis=1)


def observed_order(values) -> list:
    """Convergence orders log2(e_i / e_{i+1}) down a geometric parameter ladder.

    ``values`` is a sequence of (parameter, error) pairs whose parameters
    refine by a factor of two (doubling or halving).  Errors must be
    nonnegative; a zero error makes the adjacent order undefined and is
    reported as None.
    """
    values = list(values)
    if len(values) < 2:
        return []
    params = [float(p) for p, _ in values]
    errors = [float(e) for _, e in values]
    for a, b in zip(params, params[1:]):
        ratio = b / a
        if not (abs(ratio - 2.0) < 1e-9 or abs(ratio - 0.5) < 1e-9):
            raise ValueError(f"parameter ladder is not geometric with ratio 2: {a} -> {b}")
    for e in errors:
        if e < 0 or math.isnan(e):
            raise ValueError(f"errors must be nonnegative, got {e}")
    orders = []
    for e0, e1 in zip(errors, errors[1:]):
        if e0 == 0.0 or e1 == 0.0:
            orders.append(None)
        else:
            orders.append(math.log2(e0 / e1))
    return orders
