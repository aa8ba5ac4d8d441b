"""Classical baseline: constant-weight-code search and ML decoding.

The search hill-climbs the minimum pairwise Hamming distance under one of
three dimming constraints: every codeword weight exactly d (strict), total
weight M*d (relaxed), or average emitted optical power within a tolerance of
d (nonlinear LED).  The decoder is exact minimum-distance decoding against
the codebook images through the LED and channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import LINEAR_LED, led_forward
from .codebook import Codebook

CONSTRAINTS = ("strict", "relaxed", "nonlinear")


@dataclass(frozen=True)
class CsiModel:
    """Channel knowledge handed to the ML decoder."""

    mode: str = "perfect"        # perfect | none | perturbed
    variance: float = 0.0

    def __post_init__(self):
        if self.mode not in ("perfect", "none", "perturbed"):
            raise ValueError(f"unknown csi mode {self.mode!r}")
        if self.mode == "perturbed" and self.variance < 0:
            raise ValueError("perturbation variance must be non-negative")


@dataclass
class SearchConfig:
    n: int
    m: int
    d: float
    constraint: str = "strict"
    led: object = LINEAR_LED
    target_min_distance: int | None = None
    max_iterations: int = 20_000
    restarts: int = 20
    power_tol: float = 0.05

    def validate(self):
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if not 0 < self.d < self.n:
            raise ValueError(f"dimming target {self.d} outside (0, {self.n})")
        if self.constraint == "strict" and self.d != int(self.d):
            raise ValueError("strict constraint needs an integer weight")
        if self.constraint == "relaxed" \
                and abs(self.m * self.d - round(self.m * self.d)) > 1e-9:
            raise ValueError("relaxed constraint needs an integer total weight M*d")
        if self.m < 2:
            raise ValueError("need at least two codewords")
        if self.max_iterations < 1 or self.restarts < 1:
            raise ValueError("iteration and restart budgets must be positive")
        return self


@dataclass
class SearchResult:
    codebook: Codebook
    min_distance: int
    spectrum: tuple
    trace: list          # (restart, iteration, best_min_distance) milestones
    iterations_used: int


def _distance_profile(words):
    """(min distance, second-smallest entry) of the pairwise distance multiset."""
    m = len(words)
    diffs = words[:, None, :] != words[None, :, :]
    dist = diffs.sum(axis=2)
    iu = np.triu_indices(m, k=1)
    pair = np.sort(dist[iu])
    return int(pair[0]), int(pair[1]) if len(pair) > 1 else int(pair[0])


def _random_word(n, weight, rng):
    w = np.zeros(n, dtype=np.uint8)
    w[rng.choice(n, size=weight, replace=False)] = 1
    return w


def _codebook_power(words, led):
    return float(led_forward(words.astype(np.float64), led).sum() / len(words))


def _init_state(cfg, rng):
    n, m = cfg.n, cfg.m
    if cfg.constraint == "strict":
        words = np.stack([_random_word(n, int(cfg.d), rng) for _ in range(m)])
    elif cfg.constraint == "relaxed":
        total = int(round(m * cfg.d))
        flat = np.zeros(m * n, dtype=np.uint8)
        flat[rng.choice(m * n, size=total, replace=False)] = 1
        words = flat.reshape(m, n)
    else:
        # start anywhere, then greedily repair the power constraint; the
        # greedy walk can corner itself, so retry from fresh random points
        # before concluding the target sits in a hole of the power grid
        closest = None
        for _ in range(8):
            words = (rng.random((m, n)) < min(cfg.d / n, 0.9)).astype(np.uint8)
            for _ in range(200 * m * n):
                gap = _codebook_power(words, cfg.led) - cfg.d
                if abs(gap) <= cfg.power_tol:
                    return words
                i, j = rng.integers(0, m), rng.integers(0, n)
                flipped = words.copy()
                flipped[i, j] ^= 1
                if abs(_codebook_power(flipped, cfg.led) - cfg.d) < abs(gap):
                    words = flipped
            power = _codebook_power(words, cfg.led)
            if closest is None or abs(power - cfg.d) < abs(closest - cfg.d):
                closest = power
        raise RuntimeError(
            f"could not reach average power {cfg.d} within {cfg.power_tol}; "
            f"closest {closest:.4f}")
    return words


def _propose(cfg, words, rng):
    m, n = words.shape
    new = words.copy()
    if cfg.constraint == "strict":
        new[rng.integers(0, m)] = _random_word(n, int(cfg.d), rng)
        return new
    if cfg.constraint == "relaxed":
        # paired flip across two codewords keeps the total weight
        i, j = rng.choice(m, size=2, replace=False)
        ones = np.flatnonzero(new[i] == 1)
        zeros = np.flatnonzero(new[j] == 0)
        if len(ones) == 0 or len(zeros) == 0:
            return None
        new[i, rng.choice(ones)] = 0
        new[j, rng.choice(zeros)] = 1
        return new
    new[rng.integers(0, m), rng.integers(0, n)] ^= 1
    if abs(_codebook_power(new, cfg.led) - cfg.d) > cfg.power_tol:
        return None
    return new


def search_codebook(config: SearchConfig, rng) -> SearchResult:
    """Randomized hill climb over constrained codebooks.

    Within a restart a proposal is accepted when the minimum distance does
    not decrease; across restarts the best codebook wins, ties broken by the
    larger second-smallest distance.  Stops early at
    ``target_min_distance``.
    """
    cfg = config.validate()
    per_restart = -(-cfg.max_iterations // cfg.restarts)
    best_words = None
    best_profile = (-1, -1)
    trace = []
    used = 0
    for restart in range(cfg.restarts):
        words = _init_state(cfg, rng)
        profile = _distance_profile(words)
        if profile > best_profile:
            best_profile, best_words = profile, words.copy()
            trace.append((restart, 0, best_profile[0]))
        for it in range(per_restart):
            used += 1
            proposal = _propose(cfg, words, rng)
            if proposal is None:
                continue
            prof = _distance_profile(proposal)
            if prof >= profile:
                words, profile = proposal, prof
                if prof > best_profile:
                    best_profile, best_words = prof, proposal.copy()
                    trace.append((restart, it + 1, best_profile[0]))
            if cfg.target_min_distance is not None \
                    and best_profile[0] >= cfg.target_min_distance:
                break
        if cfg.target_min_distance is not None \
                and best_profile[0] >= cfg.target_min_distance:
            break
    book = Codebook(cfg.n, cfg.m, float(cfg.d), best_words,
                    provenance=f"search:{cfg.constraint}")
    return SearchResult(codebook=book, min_distance=best_profile[0],
                        spectrum=_spectrum(best_words), trace=trace,
                        iterations_used=used)


def _spectrum(words):
    m = len(words)
    diffs = words[:, None, :] != words[None, :, :]
    dist = diffs.sum(axis=2)
    iu = np.triu_indices(m, k=1)
    return tuple(int(x) for x in np.sort(dist[iu]))


def ml_decode(r, codebook, h, led=LINEAR_LED):
    """Exact minimum-distance decoding: argmin_b ||r - H g(s_b)||^2.

    ``h`` may be one matrix or one per received row.  Ties resolve to the
    lowest message index.
    """
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    words = codebook.words.astype(np.float64)
    images = led_forward(words, led)
    if h.ndim == 2:
        pts = images @ h.T                       # (M, N)
        diff = r[:, None, :] - pts[None, :, :]
        dist = np.einsum("bmn,bmn->bm", diff, diff)
    else:
        pts = np.einsum("bij,mj->bmi", h, images)  # (B, M, N)
        diff = r[:, None, :] - pts
        dist = np.einsum("bmn,bmn->bm", diff, diff)
    return np.argmin(dist, axis=1)


def perturb_csi(h, variance, rng):
    """Channel estimate: true matrix plus white noise on its nonzero structure."""
    h = np.asarray(h, dtype=np.float64)
    if variance < 0:
        raise ValueError("perturbation variance must be non-negative")
    if variance == 0:
        return h.copy()
    noise = rng.normal(0.0, np.sqrt(variance), size=h.shape)
    return h + noise * (h != 0)
