"""Optical front end: LED nonlinearity, channel matrices, noise.

The LED is a memory-polynomial (Hammerstein) model: a polynomial of the
current input plus a scaled polynomial of the previous slot, with nothing
before the first slot.  The reflected-path channel is a bidiagonal Toeplitz
matrix derived from a one-wall desk geometry parameterized by the photodiode
position along the desk edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 3.0e8  # m/s
BIT_INTERVAL = 1.0e-8   # s, one OOK slot

CHANNEL_KINDS = ("identity", "fixed", "isi")
DELAY_MODES = ("literal", "fractional")


@dataclass(frozen=True)
class LedModel:
    """Memory-polynomial LED: ``g_i = p(z_i) + memory * p(z_{i-1})``.

    ``coefficients`` are the polynomial weights for powers 1..K (no constant
    term: a dark LED emits nothing).  The default is the ideal linear device.
    """

    coefficients: tuple = (1.0,)
    memory: float = 0.0

    @property
    def is_linear(self):
        return self.coefficients == (1.0,) and self.memory == 0.0


LINEAR_LED = LedModel()
# blue 5 mm device fit, powers 1..4 with one-slot memory
KINGBRIGHT_LED = LedModel((34.11, -29.99, 6.999, -0.1468), 0.1)


def _poly(z, model):
    # polynomial with powers 1..K (zero constant term)
    acc = np.zeros_like(z)
    for a in reversed(model.coefficients):
        acc = (acc + a) * z
    return acc


def _poly_deriv(z, model):
    acc = np.zeros_like(z)
    for k in range(len(model.coefficients), 0, -1):
        acc = acc * z + k * model.coefficients[k - 1]
    return acc


def led_forward(z, model=LINEAR_LED):
    """Emitted optical signal for drive levels ``z`` (last axis = slots)."""
    z = np.asarray(z, dtype=np.float64)
    if model.is_linear:
        return z.copy()
    p = _poly(z, model)
    prev = np.zeros_like(p)
    prev[..., 1:] = p[..., :-1]
    return p + model.memory * prev


def led_backward(z, upstream, model=LINEAR_LED):
    """Gradient of a scalar through ``led_forward`` back to the drive levels."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if model.is_linear:
        return upstream.copy()
    z = np.asarray(z, dtype=np.float64)
    shifted = np.zeros_like(upstream)
    shifted[..., :-1] = upstream[..., 1:]
    return (upstream + model.memory * shifted) * _poly_deriv(z, model)


def led_derivative(z, model=LINEAR_LED):
    """Jacobian bands of ``led_forward`` at ``z``: (diagonal, first subdiagonal).

    The subdiagonal entry ``sub[..., i]`` is d g_{i+1} / d z_i.
    """
    z = np.asarray(z, dtype=np.float64)
    if model.is_linear:
        diag = np.ones_like(z)
        return diag, np.zeros_like(z[..., :-1])
    dp = _poly_deriv(z, model)
    return dp, model.memory * dp[..., :-1]


def led_jacobian(z, model=LINEAR_LED):
    """Full Jacobian matrix for a single drive vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("led_jacobian takes a single vector")
    diag, sub = led_derivative(z, model)
    jac = np.diag(diag)
    jac[np.arange(1, len(z)), np.arange(len(z) - 1)] = sub
    return jac


@dataclass(frozen=True)
class IsiGeometry:
    """Desk geometry: distances, reflected-path gain, and delay ratio."""

    position: float
    d_lp: float     # LED -> photodiode, line of sight
    d_lw: float     # LED -> wall
    d_wp: float     # wall -> photodiode
    gamma: float    # reflected-path relative gain
    tau: float      # reflected-path propagation time, seconds
    delta: float    # delay as a fraction of the slot interval


def isi_geometry(position):
    """Geometry for a photodiode at ``position`` meters along the desk edge."""
    p = float(position)
    if not 0.0 <= p <= 3.0:
        raise ValueError(f"photodiode position must lie in [0, 3], got {p}")
    d_lp = np.sqrt((1.5 - p) ** 2 + 9.0)
    d_lw = np.sqrt((4.5 / (4.5 - p)) ** 2 + 2.25)
    d_wp = np.sqrt((3.0 - p) ** 2 + (3.0 - 4.5 / (4.5 - p)) ** 2)
    gamma = d_lp ** 4 / (d_lw + d_wp) ** 4
    tau = (d_lw + d_wp) / SPEED_OF_LIGHT
    delta = tau / BIT_INTERVAL
    return IsiGeometry(p, d_lp, d_lw, d_wp, gamma, tau, delta)


def isi_matrix(n, gamma, delta):
    """Bidiagonal Toeplitz channel: diagonal 1 + gamma*(1-delta), subdiagonal gamma*delta."""
    h = np.zeros((n, n))
    idx = np.arange(n)
    h[idx, idx] = 1.0 + gamma * (1.0 - delta)
    h[idx[1:], idx[:-1]] = gamma * delta
    return h


def make_isi_channel(position, n, delay_mode="literal"):
    """Channel matrix plus geometry for a photodiode position."""
    if delay_mode not in DELAY_MODES:
        raise ValueError(f"unknown delay mode {delay_mode!r}")
    geom = isi_geometry(position)
    delta = geom.delta if delay_mode == "literal" else geom.delta % 1.0
    return isi_matrix(n, geom.gamma, delta), geom


def sample_geometry(rng):
    """Photodiode position drawn uniformly over the desk edge [0, 3]."""
    return rng.uniform(0.0, 3.0)


@dataclass
class ChannelSpec:
    """What sits between the LED drive and the decoder input."""

    kind: str = "identity"
    matrix: np.ndarray | None = None      # for kind == "fixed"
    noise_variance: float = 0.1
    delay_mode: str = "literal"

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be non-negative")
        if self.delay_mode not in DELAY_MODES:
            raise ValueError(f"unknown delay mode {self.delay_mode!r}")
        if self.kind == "fixed":
            if self.matrix is None:
                raise ValueError("fixed channel needs a matrix")
            m = np.asarray(self.matrix, dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("channel matrix must be square")
            if not np.all(np.isfinite(m)):
                raise ValueError("channel matrix must be finite")
            self.matrix = m

    @property
    def random_per_sample(self):
        return self.kind == "isi"

    def fixed_matrix(self, n):
        if self.kind == "identity":
            return np.eye(n)
        if self.kind == "fixed":
            if self.matrix.shape[0] != n:
                raise ValueError(f"channel matrix is {self.matrix.shape[0]}x"
                                 f"{self.matrix.shape[0]}, code length is {n}")
            return self.matrix
        raise ValueError("ISI channel has no fixed matrix; draw per sample")

    def draw_matrices(self, n, count, rng):
        """Per-sample channel matrices (ISI: fresh geometry each row)."""
        if not self.random_per_sample:
            return np.broadcast_to(self.fixed_matrix(n), (count, n, n))
        out = np.empty((count, n, n))
        for i in range(count):
            out[i], _ = make_isi_channel(sample_geometry(rng), n, self.delay_mode)
        return out


def apply_channel(y, h, noise_variance, rng):
    """``r = H y + noise`` with fresh white Gaussian noise."""
    y = np.asarray(y, dtype=np.float64)
    if h.ndim == 3:
        r = np.einsum("bij,bj->bi", h, np.atleast_2d(y))
    else:
        r = np.atleast_2d(y) @ h.T
    if noise_variance > 0:
        r = r + rng.normal(0.0, np.sqrt(noise_variance), size=r.shape)
    if y.ndim == 1:
        return r[0]
    return r


def transmit(s, channel, led, rng, n=None):
    """Push bits through the LED and channel: ``r = H g(s) + noise``."""
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[-1] if n is None else n
    y = led_forward(s, led)
    if channel.random_per_sample:
        count = 1 if s.ndim == 1 else s.shape[0]
        h = channel.draw_matrices(n, count, rng)
        if s.ndim == 1:
            h = h[0]
    else:
        h = channel.fixed_matrix(n)
    return apply_channel(y, h, channel.noise_variance, rng)


def load_matrix(path):
    """Square numeric matrix from a whitespace-separated text file."""
    m = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{path}: expected a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{path}: matrix entries must be finite")
    return m
