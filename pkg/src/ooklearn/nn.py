"""Dense-network engine for the transceiver.

The encoder and decoder are fixed chains of affine layers, so reverse-mode
gradients are computed with an explicit per-layer tape instead of a general
autodiff graph.  Everything runs in float64; the finite-difference gradient
gates need the precision headroom.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "linear", "softmax")

# hidden-layer widths as a function of the message-set size M
ENCODER_HIDDEN = {
    "base": lambda m: (2 * m * m, m * m, m * m // 2),
    "wide": lambda m: (24 * m * m, 12 * m * m, 12 * m * m, 6 * m * m),
    "deep": lambda m: (32 * m * m, 16 * m * m, 8 * m * m, 4 * m * m, m * m),
}

CSI_MODES = ("fixed", "perfect", "none")


@dataclass(frozen=True)
class LayerSpec:
    """Shape and behaviour of one dense layer."""

    input_dim: int
    output_dim: int
    activation: str = "relu"
    batch_norm: bool = False

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def relu(x):
    return np.maximum(x, 0.0)


def softmax(v):
    """Row-wise softmax; strictly positive, rows sum to one."""
    shifted = v - v.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    e = np.maximum(e, 1e-300)  # keep probabilities strictly positive
    return e / e.sum(axis=1, keepdims=True)


class BatchNorm:
    """Per-feature batch normalization (affine output, running eval stats)."""

    def __init__(self, dim, momentum=0.99, eps=1e-5):
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.batches_seen = 0
        self._warned = False

    def forward(self, x, train):
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mean
            self.running_var = m * self.running_var + (1.0 - m) * var
            self.batches_seen += 1
        else:
            if self.batches_seen == 0 and not self._warned:
                log.warning("batch norm evaluated before any training batch; "
                            "using initial statistics (mean 0, var 1)")
                self._warned = True
            mean = self.running_mean
            var = self.running_var
        invstd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * invstd
        out = self.gamma * xhat + self.beta
        return out, (xhat, invstd, train)

    def backward(self, dout, cache):
        xhat, invstd, train = cache
        dgamma = (dout * xhat).sum(axis=0)
        dbeta = dout.sum(axis=0)
        dxhat = dout * self.gamma
        if train:
            # batch statistics depend on every row
            b = dout.shape[0]
            dx = (invstd / b) * (b * dxhat - dxhat.sum(axis=0)
                                 - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * invstd
        return dx, dgamma, dbeta

    def copy(self):
        dup = BatchNorm(len(self.gamma), self.momentum, self.eps)
        dup.gamma = self.gamma.copy()
        dup.beta = self.beta.copy()
        dup.running_mean = self.running_mean.copy()
        dup.running_var = self.running_var.copy()
        dup.batches_seen = self.batches_seen
        return dup


class DenseNet:
    """Stack of dense layers, batch-major (one sample per row).

    ``forward`` returns the activations plus a tape; ``backward`` consumes the
    tape and the gradient at the final pre-activation and returns parameter
    gradients in ``param_arrays`` order together with the input gradient.
    """

    def __init__(self, specs, rng=None, bn_momentum=0.99, bn_eps=1e-5):
        specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in specs]
        if not specs:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(specs, specs[1:]):
            if a.output_dim != b.input_dim:
                raise ValueError(f"layer chain mismatch: {a.output_dim} -> {b.input_dim}")
        self.specs = specs
        self.weights = []
        self.biases = []
        self.norms = []
        for spec in specs:
            if rng is None:
                w = np.zeros((spec.input_dim, spec.output_dim))
            else:
                # He-style fan-in scaling for ReLU layers, smaller for outputs
                limit = np.sqrt((6.0 if spec.activation == "relu" else 1.0) / spec.input_dim)
                w = rng.uniform(-limit, limit, size=(spec.input_dim, spec.output_dim))
            self.weights.append(w)
            self.biases.append(np.zeros(spec.output_dim))
            self.norms.append(BatchNorm(spec.output_dim, bn_momentum, bn_eps)
                              if spec.batch_norm else None)

    @property
    def input_dim(self):
        return self.specs[0].input_dim

    @property
    def output_dim(self):
        return self.specs[-1].output_dim

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {x.shape[1]}")
        tape = []
        out = x
        for spec, w, b, bn in zip(self.specs, self.weights, self.biases, self.norms):
            xin = out
            pre = xin @ w + b
            bn_cache = None
            if bn is not None:
                pre, bn_cache = bn.forward(pre, train)
            if spec.activation == "relu":
                out = relu(pre)
            elif spec.activation == "softmax":
                out = softmax(pre)
            else:
                out = pre
            tape.append((xin, pre, bn_cache))
        if squeeze:
            return out[0], tape
        return out, tape

    def backward(self, tape, dlast):
        """Backward pass.

        ``dlast`` is the gradient at the final layer's pre-activation (for a
        softmax head pass ``probs - onehot`` style terms; for a linear head it
        equals the output gradient).
        """
        dpre = np.atleast_2d(np.asarray(dlast, dtype=np.float64))
        grads = [None] * len(self._slots())
        slot = len(grads)
        dx = None
        for idx in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[idx]
            xin, pre, bn_cache = tape[idx]
            if idx != len(self.specs) - 1:
                if spec.activation == "relu":
                    dpre = dx * (pre > 0)
                elif spec.activation == "linear":
                    dpre = dx
                else:
                    raise ValueError("softmax is only supported as the output layer")
            bn = self.norms[idx]
            if bn is not None:
                dpre, dgamma, dbeta = bn.backward(dpre, bn_cache)
                slot -= 2
                grads[slot] = dgamma
                grads[slot + 1] = dbeta
            dw = xin.T @ dpre
            db = dpre.sum(axis=0)
            slot -= 2
            grads[slot] = dw
            grads[slot + 1] = db
            dx = dpre @ self.weights[idx].T
        return grads, dx

    def _slots(self):
        slots = []
        for w, b, bn in zip(self.weights, self.biases, self.norms):
            slots.append(w)
            slots.append(b)
            if bn is not None:
                slots.append(bn.gamma)
                slots.append(bn.beta)
        return slots

    def param_arrays(self):
        """Live parameter arrays, in the order ``backward`` emits gradients."""
        return self._slots()

    def copy(self):
        dup = DenseNet(self.specs)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        dup.norms = [bn.copy() if bn is not None else None for bn in self.norms]
        return dup


class Adam:
    """Bias-corrected Adam over a list of arrays, updated in place.

    ``ascent`` marks entries whose objective is maximized (the dual
    variables); their gradients are negated before the descent update.
    """

    def __init__(self, arrays, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads, lr, ascent=None, lrs=None):
        if len(arrays) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("array/gradient count does not match optimizer state")
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in slot {i}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (a, g) in enumerate(zip(arrays, grads)):
            if ascent is not None and ascent[i]:
                g = -g
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            step_lr = lr if lrs is None else lrs[i]
            a -= step_lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class ModelParams:
    """Encoder/decoder pair with the shared code and message dimensions."""

    n: int
    m: int
    encoder: DenseNet
    decoder: DenseNet
    csi_mode: str = "fixed"

    def __post_init__(self):
        if self.csi_mode not in CSI_MODES:
            raise ValueError(f"unknown csi mode {self.csi_mode!r}")
        if self.encoder.input_dim != self.m + 1:
            raise ValueError("encoder input dim must be M+1")
        if self.encoder.output_dim != self.n:
            raise ValueError("encoder output dim must be N")
        want = self.n + 1 + (self.n * self.n if self.csi_mode == "perfect" else 0)
        if self.decoder.input_dim != want:
            raise ValueError(f"decoder input dim must be {want} for csi mode {self.csi_mode}")
        if self.decoder.output_dim != self.m:
            raise ValueError("decoder output dim must be M")

    def encoder_input(self, messages, dims):
        messages = np.atleast_1d(np.asarray(messages, dtype=np.int64))
        dims = np.broadcast_to(np.atleast_1d(np.asarray(dims, dtype=np.float64)),
                               messages.shape)
        if messages.min() < 0 or messages.max() >= self.m:
            raise ValueError("message index out of range")
        x = np.zeros((len(messages), self.m + 1))
        x[np.arange(len(messages)), messages] = 1.0
        x[:, self.m] = dims / self.n
        return x

    def decoder_input(self, received, dims, csi=None):
        received = np.atleast_2d(np.asarray(received, dtype=np.float64))
        dims = np.broadcast_to(np.atleast_1d(np.asarray(dims, dtype=np.float64)),
                               (received.shape[0],))
        cols = [received, (dims / self.n)[:, None]]
        if self.csi_mode == "perfect":
            if csi is None:
                raise ValueError("perfect-CSI decoder needs channel matrices")
            csi = np.asarray(csi, dtype=np.float64)
            if csi.ndim == 2:
                csi = np.broadcast_to(csi, (received.shape[0],) + csi.shape)
            cols.append(csi.reshape(received.shape[0], self.n * self.n))
        elif csi is not None:
            raise ValueError(f"csi mode {self.csi_mode!r} takes no channel input")
        return np.concatenate(cols, axis=1)

    def forward_encoder(self, messages, dims, train=False):
        """Continuous pre-binarization outputs for a batch of (message, d)."""
        u, _ = self.encoder.forward(self.encoder_input(messages, dims), train)
        return u

    def forward_decoder(self, received, dims, csi=None, train=False):
        """Posterior message probabilities for received vectors."""
        p, _ = self.decoder.forward(self.decoder_input(received, dims, csi), train)
        return p

    def param_arrays(self):
        return self.encoder.param_arrays() + self.decoder.param_arrays()

    def copy(self):
        return ModelParams(self.n, self.m, self.encoder.copy(), self.decoder.copy(),
                           self.csi_mode)


def encoder_layer_specs(m, n, preset="base", batch_norm=True):
    hidden = _hidden_dims(m, preset)
    dims = [m + 1, *hidden, n]
    return _chain(dims, batch_norm, output_norm=True)


def decoder_layer_specs(m, n, preset="base", csi_mode="fixed", batch_norm=True):
    hidden = tuple(reversed(_hidden_dims(m, preset)))
    extra = n * n if csi_mode == "perfect" else 0
    dims = [n + 1 + extra, *hidden, m]
    return _chain(dims, batch_norm, head="softmax")


def build_model(n, m, preset="base", csi_mode="fixed", batch_norm=True, rng=None):
    """Construct an encoder/decoder pair with the preset hidden widths."""
    enc = DenseNet(encoder_layer_specs(m, n, preset, batch_norm), rng)
    dec = DenseNet(decoder_layer_specs(m, n, preset, csi_mode, batch_norm), rng)
    return ModelParams(n, m, enc, dec, csi_mode)


def _hidden_dims(m, preset):
    if preset not in ENCODER_HIDDEN:
        raise ValueError(f"unknown architecture preset {preset!r}")
    if m < 2:
        raise ValueError("message count must be at least 2")
    return tuple(ENCODER_HIDDEN[preset](m))


def _chain(dims, batch_norm, head="linear", output_norm=False):
    # Normalizing the encoder output keeps the pre-binarization activations
    # spread across the sigmoid range, so the codewords differentiate from the
    # first iterations instead of growing out of a single shared support.  The
    # decoder head stays un-normalized because its output feeds a softmax.
    specs = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        specs.append(LayerSpec(a, b,
                               activation=head if last else "relu",
                               batch_norm=batch_norm and (output_norm or not last)))
    return specs
