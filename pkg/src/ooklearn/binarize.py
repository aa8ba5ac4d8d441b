"""Stochastic and deterministic binarization of encoder outputs.

Each real-valued encoder coordinate is pushed through a unit-slope sigmoid
shifted by a per-dimming-target offset; the sigmoid value acts as the
on-probability of the transmitted bit.  Training samples from it, evaluation
thresholds it, and backprop treats the sample as a pass-through perturbed by
the sigmoid derivative (straight-through estimator).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

DEFAULT_RANGE_BOUND = 4.0


def sigmoid(z):
    return expit(z)


def _softplus(x):
    return np.logaddexp(0.0, x)


def solve_offset(d, n, range_bound=DEFAULT_RANGE_BOUND, tol=1e-12, max_iter=200):
    """Offset making the average on-probability over the input range equal d/n.

    Solves mean(sigmoid(z - offset)) = d/n for z uniform on
    [-range_bound, range_bound], using bisection on the closed-form
    antiderivative (softplus).  The residual of the normalized condition is
    driven below ``tol``.
    """
    if not 0 < d < n:
        raise ValueError(f"dimming target must lie strictly inside (0, {n}), got {d}")
    if range_bound <= 0:
        raise ValueError("range bound must be positive")
    b = float(range_bound)
    target = d / n  # normalized mean on-probability

    def mean_prob(delta):
        return (_softplus(b - delta) - _softplus(-b - delta)) / (2.0 * b)

    lo, hi = -(b + 60.0), b + 60.0  # mean_prob(lo) ~ 1, mean_prob(hi) ~ 0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mean_prob(mid) > target:
            lo = mid  # offset too small, integral too large
        else:
            hi = mid
        if hi - lo < 1e-15 and abs(mean_prob(mid) - target) <= tol:
            break
    delta = 0.5 * (lo + hi)
    if abs(mean_prob(delta) - target) > 1e-9:
        raise RuntimeError(f"offset solve did not converge for d={d}, n={n}")
    return delta


@dataclass
class BinarizerSpec:
    """Code length, sigmoid input range, and the per-target offset table."""

    n: int
    range_bound: float = DEFAULT_RANGE_BOUND
    offsets: dict = field(default_factory=dict)

    @classmethod
    def for_targets(cls, targets, n, range_bound=DEFAULT_RANGE_BOUND):
        spec = cls(n=n, range_bound=range_bound)
        for d in targets:
            spec.offset(d)
        return spec

    def offset(self, d):
        d = float(d)
        if d not in self.offsets:
            self.offsets[d] = solve_offset(d, self.n, self.range_bound)
        return self.offsets[d]

    def offsets_for(self, dims):
        """Per-row offsets for a vector of dimming targets."""
        dims = np.atleast_1d(np.asarray(dims, dtype=np.float64))
        return np.array([self.offset(d) for d in dims])

    def probabilities(self, u, dims):
        """On-probabilities h(u) = sigmoid(u - offset(d)) row by row."""
        u = np.asarray(u, dtype=np.float64)
        delta = self.offsets_for(dims)
        if u.ndim == 1:
            return expit(u - delta[0])
        return expit(u - delta[:, None])


def stochastic_binarize(u, delta, rng):
    """Sample bits with P(s_i = 1) = sigmoid(u_i - delta), independently.

    Returns ``(s, probs)`` with ``s`` float64 in {0.0, 1.0}.
    """
    u = np.asarray(u, dtype=np.float64)
    probs = expit(u - _align(delta, u))
    s = (rng.random(u.shape) < probs).astype(np.float64)
    return s, probs


def deterministic_binarize(u, delta):
    """Threshold at the offset: s_i = 1 iff u_i >= delta (ties go to 1)."""
    u = np.asarray(u, dtype=np.float64)
    return (u >= _align(delta, u)).astype(np.float64)


def ste_backward(probs, upstream):
    """Straight-through gradient: upstream scaled by the sigmoid derivative."""
    return upstream * probs * (1.0 - probs)


def _align(delta, u):
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim == 1 and u.ndim == 2:
        return delta[:, None]
    return delta
