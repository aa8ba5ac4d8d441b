"""Constrained transceiver training.

The encoder, stochastic binarizer, optical channel, and decoder form one
differentiable surrogate.  The decoder cross-entropy is minimized subject to
per-dimming-target average-power equality constraints, either by primal-dual
iteration on an augmented Lagrangian (Adam descent on the weights, plain
gradient ascent on the multipliers) or by a fixed quadratic penalty.
Checkpoints are gated on validation: lowest validation Lagrangian among
iterates whose deterministic codebooks meet every dimming target within
tolerance.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import codebook as cb
from .binarize import BinarizerSpec
from .channel import LINEAR_LED, apply_channel, led_backward, led_forward
from .config import TrainConfig
from .nn import Adam, build_model

log = logging.getLogger(__name__)

BIN_MODES = ("sample", "mean", "hard")


@dataclass
class DualState:
    """Lagrange multipliers, one per dimming target, plus the quadratic weight."""

    targets: tuple
    lam: np.ndarray
    rho: float = 3e-6

    @classmethod
    def zeros(cls, targets, rho=3e-6):
        return cls(tuple(float(d) for d in targets),
                   np.zeros(len(tuple(targets))), float(rho))

    def copy(self):
        return DualState(self.targets, self.lam.copy(), self.rho)


def cross_entropy_cost(probs, messages):
    """Mean negative log-probability of the true messages."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    messages = np.atleast_1d(np.asarray(messages, dtype=np.int64))
    picked = probs[np.arange(len(messages)), messages]
    floor = 1e-300
    if picked.min() < floor:
        log.warning("cross entropy saw probabilities below %g; clamping", floor)
        picked = np.maximum(picked, floor)
    return float(-np.mean(np.log(picked)))


def dimming_constraint(u, delta, led=LINEAR_LED):
    """Average-power surrogate F_d from encoder outputs for every message.

    ``u`` holds one row per message at a common dimming target whose
    binarizer offset is ``delta``.  The on-probabilities h(u) pass through
    the LED model; the result is the expected per-codeword emitted power
    (expected Hamming weight for a linear LED).
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    h = expit(u - delta)
    return float(led_forward(h, led).sum() / len(u))


def lagrangian(cost, constraint_values, duals):
    """Augmented Lagrangian value for given constraint estimates."""
    res = np.asarray(constraint_values, dtype=np.float64) - np.asarray(duals.targets)
    return float(cost + duals.lam @ res + duals.rho * (res @ res))


def penalty_objective(cost, constraint_values, targets, mu):
    res = np.asarray(constraint_values, dtype=np.float64) - np.asarray(targets)
    return float(cost + mu * (res @ res))


@dataclass
class Batch:
    messages: np.ndarray            # (B,) int message indices
    dims: np.ndarray                # (B,) dimming targets
    noise: np.ndarray               # (B, N)
    matrices: np.ndarray | None = None   # (B, N, N) per-sample channels


def make_batch(m, n, targets, batch_size, noise_variance, channel, rng):
    """Training batch: stratified (message, target) pairs plus fresh noise.

    Every (message, target) pair appears ``batch_size // (M*D)`` times; the
    remainder is drawn uniformly.  Channel matrices are drawn per sample only
    for randomized channels.
    """
    targets = np.asarray(targets, dtype=np.float64)
    pairs = m * len(targets)
    reps = batch_size // pairs
    rem = batch_size - reps * pairs
    base_msg = np.tile(np.repeat(np.arange(m), len(targets)), reps)
    base_dim = np.tile(np.tile(targets, m), reps)
    extra = rng.integers(0, pairs, size=rem)
    messages = np.concatenate([base_msg, extra // len(targets)])
    dims = np.concatenate([base_dim, targets[extra % len(targets)]])
    noise = rng.normal(0.0, np.sqrt(noise_variance), size=(batch_size, n))
    matrices = channel.draw_matrices(n, batch_size, rng) \
        if channel.random_per_sample else None
    return Batch(messages, dims, noise, matrices)


@dataclass
class PassTape:
    """Everything the constrained backward pass needs from one forward pass."""

    batch: Batch
    enc_tape: list
    dec_tape: list
    u: np.ndarray
    probs: np.ndarray
    s: np.ndarray
    p: np.ndarray
    cost: float
    constraint: np.ndarray          # batch estimate of F_d per target
    groups: list                    # row indices per target
    h_fixed: np.ndarray | None
    led: object
    targets: np.ndarray


def transceiver_pass(model, binarizer, led, channel_matrix, batch, targets,
                     mode="sample", rng=None, train=None):
    """One batch through encoder, binarizer, LED, channel, decoder.

    ``mode``: ``sample`` draws bits, ``mean`` substitutes the on-probabilities
    (the deterministic surrogate used for gradient checks), ``hard``
    thresholds.  ``train`` controls batch-norm statistics and defaults to
    True exactly for ``sample`` mode.
    """
    if mode not in BIN_MODES:
        raise ValueError(f"unknown binarization mode {mode!r}")
    if train is None:
        train = mode == "sample"
    targets = np.asarray(targets, dtype=np.float64)

    x_enc = model.encoder_input(batch.messages, batch.dims)
    u, enc_tape = model.encoder.forward(x_enc, train)
    delta = binarizer.offsets_for(batch.dims)
    probs = expit(u - delta[:, None])
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        s = (rng.random(u.shape) < probs).astype(np.float64)
    elif mode == "mean":
        s = probs
    else:
        s = (u >= delta[:, None]).astype(np.float64)

    y = led_forward(s, led)
    if batch.matrices is not None:
        r = np.einsum("bij,bj->bi", batch.matrices, y) + batch.noise
        h_fixed = None
    else:
        r = y @ channel_matrix.T + batch.noise
        h_fixed = channel_matrix

    csi = None
    if model.csi_mode == "perfect":
        csi = batch.matrices if batch.matrices is not None else channel_matrix
    x_dec = model.decoder_input(r, batch.dims, csi)
    p, dec_tape = model.decoder.forward(x_dec, train)

    cost = cross_entropy_cost(p, batch.messages)
    groups = [np.flatnonzero(batch.dims == d) for d in targets]
    row_power = led_forward(probs, led).sum(axis=1)
    constraint = np.array([row_power[g].mean() if len(g) else float(d)
                           for g, d in zip(groups, targets)])
    return PassTape(batch, enc_tape, dec_tape, u, probs, s, p, cost,
                    constraint, groups, h_fixed, led, targets)


def constrained_backward(model, tape, lam=None, rho=0.0, mu=None):
    """Gradients of the batch Lagrangian (or penalized objective).

    Returns ``(enc_grads, dec_grads, residuals)``; the residual vector is
    exactly the multiplier gradient.  Pass ``lam``/``rho`` for the
    primal-dual objective or ``mu`` for the quadratic penalty.
    """
    if (lam is None) == (mu is None):
        raise ValueError("pass exactly one of lam (with rho) or mu")
    batch_size = len(tape.batch.messages)
    onehot = np.zeros_like(tape.p)
    onehot[np.arange(batch_size), tape.batch.messages] = 1.0
    dv = (tape.p - onehot) / batch_size

    dec_grads, dx_dec = model.decoder.backward(tape.dec_tape, dv)
    dr = dx_dec[:, :model.n]
    if tape.batch.matrices is not None:
        dy = np.einsum("bij,bi->bj", tape.batch.matrices, dr)
    else:
        dy = dr @ tape.h_fixed
    ds = led_backward(tape.s, dy, tape.led)

    residuals = tape.constraint - tape.targets
    coeff = 2.0 * mu * residuals if mu is not None else lam + 2.0 * rho * residuals
    dprobs = np.zeros_like(tape.probs)
    for g, c in zip(tape.groups, coeff):
        if len(g) == 0 or c == 0.0:
            continue
        if tape.led.is_linear:
            dprobs[g] += c / len(g)
        else:
            ones = np.ones((len(g), model.n))
            dprobs[g] += (c / len(g)) * led_backward(tape.probs[g], ones, tape.led)

    du = (ds + dprobs) * tape.probs * (1.0 - tape.probs)
    enc_grads, _ = model.encoder.backward(tape.enc_tape, du)
    return enc_grads, dec_grads, residuals


def surrogate_objective(model, binarizer, led, channel_matrix, batch, targets,
                        lam=None, rho=0.0, mu=None, train=True):
    """Deterministic surrogate value (binarization replaced by h(u)).

    This is the scalar whose analytic gradient ``constrained_backward``
    produces in ``mean`` mode; finite differences on it validate the
    backward pass.
    """
    tape = transceiver_pass(model, binarizer, led, channel_matrix, batch,
                            targets, mode="mean", train=train)
    if mu is not None:
        return penalty_objective(tape.cost, tape.constraint, targets, mu)
    duals = DualState(tuple(float(t) for t in targets),
                      np.zeros(len(targets)) if lam is None else np.asarray(lam, dtype=np.float64),
                      rho)
    return lagrangian(tape.cost, tape.constraint, duals)


@dataclass
class ValidationSet:
    messages: np.ndarray
    dim_index: np.ndarray
    noise: np.ndarray
    matrices: np.ndarray | None


def build_validation_set(m, n, targets, count, noise_variance, channel, rng):
    messages = rng.integers(0, m, size=count)
    dim_index = rng.integers(0, len(targets), size=count)
    noise = rng.normal(0.0, np.sqrt(noise_variance), size=(count, n))
    matrices = channel.draw_matrices(n, count, rng) \
        if channel.random_per_sample else None
    return ValidationSet(messages, dim_index, noise, matrices)


@dataclass
class TrainReport:
    """Traces and summary of one training run."""

    targets: tuple
    penalty_mu: float | None
    iterations: list = field(default_factory=list)
    validations: list = field(default_factory=list)
    l_best: float = np.inf
    best_iteration: int | None = None
    best_feasible_cost: float = np.inf
    final_residuals: tuple = ()
    wall_clock: float = 0.0
    seed: int = 0
    feasible: bool = False
    diverged: bool = False

    def write_trace(self, path):
        """Per-iteration trace as CSV; validation columns filled when present."""
        cols = ["iteration", "cost", "lagrangian"]
        cols += [f"residual_{d:g}" for d in self.targets]
        if self.penalty_mu is None:
            cols += [f"lambda_{d:g}" for d in self.targets]
        cols += ["val_cost", "val_lagrangian", "val_feasible"]
        val_by_iter = {v["iteration"]: v for v in self.validations}
        lines = [",".join(cols)]
        for row in self.iterations:
            vals = [str(row["iteration"]), repr(row["cost"]), repr(row["lagrangian"])]
            vals += [repr(x) for x in row["residuals"]]
            if self.penalty_mu is None:
                vals += [repr(x) for x in row["lambdas"]]
            v = val_by_iter.get(row["iteration"])
            if v is None:
                vals += ["", "", ""]
            else:
                vals += [repr(v["cost"]), repr(v["lagrangian"]), str(int(v["feasible"]))]
            lines.append(",".join(vals))
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")

    def summary(self):
        """Summary dict for the report file (wall clock deliberately omitted:
        timing belongs to the run manifest so reports stay byte-stable)."""
        return {
            "targets": list(self.targets),
            "method": "penalty" if self.penalty_mu is not None else "primal_dual",
            "penalty_mu": self.penalty_mu,
            "iterations_run": len(self.iterations),
            "l_best": None if not np.isfinite(self.l_best) else self.l_best,
            "best_iteration": self.best_iteration,
            "best_feasible_cost": None if not np.isfinite(self.best_feasible_cost)
                                  else self.best_feasible_cost,
            "final_residuals": list(self.final_residuals),
            "seed": self.seed,
            "feasible": self.feasible,
            "diverged": self.diverged,
        }


@dataclass
class TrainResult:
    model: object
    binarizer: BinarizerSpec
    duals: DualState | None
    report: TrainReport
    feasible: bool
    config: TrainConfig

    def codebooks(self):
        return {d: cb.extract_codebook(self.model, self.binarizer, d)
                for d in self.config.dimming}


class Trainer:
    """Owns the model, dual state, optimizer, and data streams for one run."""

    def __init__(self, config: TrainConfig):
        self.cfg = config.resolved()
        cfg = self.cfg
        root = np.random.SeedSequence(cfg.seed)
        init_ss, data_ss, val_ss = root.spawn(3)
        self.rng_data = np.random.default_rng(data_ss)
        self.model = build_model(cfg.n, cfg.m, cfg.arch_preset, cfg.csi_mode,
                                 cfg.batch_norm, np.random.default_rng(init_ss))
        self.binarizer = BinarizerSpec.for_targets(cfg.dimming, cfg.n,
                                                   cfg.range_bound)
        self.channel = cfg.channel
        self.h_fixed = None if self.channel.random_per_sample \
            else self.channel.fixed_matrix(cfg.n)
        self.penalty = cfg.penalty_mu is not None
        self.duals = None if self.penalty \
            else DualState.zeros(cfg.dimming, cfg.rho)
        self.opt = Adam(self.model.param_arrays())
        self.validation = build_validation_set(
            cfg.m, cfg.n, cfg.dimming, cfg.validation_samples,
            cfg.noise_variance, self.channel, np.random.default_rng(val_ss))

    def next_batch(self):
        cfg = self.cfg
        return make_batch(cfg.m, cfg.n, cfg.dimming, cfg.batch_size,
                          cfg.noise_variance, self.channel, self.rng_data)

    def primal_dual_step(self, batch):
        """Adam descent on the weights, plain gradient ascent on the duals.

        The multipliers deliberately bypass the adaptive optimizer: their
        step must be proportional to the raw power residual so the ascent
        stalls exactly when the constraints are met, whereas a normalized
        step would keep kicking them at feasibility.
        """
        if self.penalty:
            raise ValueError("trainer was configured for penalty training")
        tape = transceiver_pass(self.model, self.binarizer, self.cfg.led,
                                self.h_fixed, batch, self.cfg.dimming,
                                mode="sample", rng=self.rng_data)
        enc_g, dec_g, residuals = constrained_backward(
            self.model, tape, lam=self.duals.lam, rho=self.duals.rho)
        value = lagrangian(tape.cost, tape.constraint, self.duals)
        self.opt.step(self.model.param_arrays(), enc_g + dec_g,
                      self.cfg.learning_rate)
        self.duals.lam += self.cfg.dual_learning_rate * residuals
        if self.cfg.clamp_duals:
            np.maximum(self.duals.lam, 0.0, out=self.duals.lam)
        return {"cost": tape.cost, "lagrangian": value,
                "residuals": residuals, "lambdas": self.duals.lam.copy()}

    def penalty_step(self, batch):
        """Descent on the fixed quadratic-penalty objective."""
        if not self.penalty:
            raise ValueError("trainer was configured for primal-dual training")
        mu = self.cfg.penalty_mu
        tape = transceiver_pass(self.model, self.binarizer, self.cfg.led,
                                self.h_fixed, batch, self.cfg.dimming,
                                mode="sample", rng=self.rng_data)
        enc_g, dec_g, residuals = constrained_backward(self.model, tape, mu=mu)
        value = penalty_objective(tape.cost, tape.constraint,
                                  self.cfg.dimming, mu)
        self.opt.step(self.model.param_arrays(), enc_g + dec_g,
                      self.cfg.learning_rate)
        return {"cost": tape.cost, "lagrangian": value,
                "residuals": residuals, "lambdas": None}

    def step(self, batch):
        return self.penalty_step(batch) if self.penalty \
            else self.primal_dual_step(batch)

    def feasibility_residuals(self):
        """Deterministic-codebook power residual per target (eval mode)."""
        res = []
        for d in self.cfg.dimming:
            book = cb.extract_codebook(self.model, self.binarizer, d)
            res.append(cb.average_power(book, self.cfg.led) - d)
        return np.array(res)

    def validate(self):
        """Validation cost/Lagrangian with deterministic binarization."""
        cfg = self.cfg
        vset = self.validation
        book_list = [cb.extract_codebook(self.model, self.binarizer, d)
                     for d in cfg.dimming]
        books = np.stack([b.words for b in book_list]).astype(np.float64)
        residuals = np.array([cb.average_power(b, cfg.led) - d
                              for b, d in zip(book_list, cfg.dimming)])
        s = books[vset.dim_index, vset.messages]
        y = led_forward(s, cfg.led)
        if vset.matrices is not None:
            r = np.einsum("bij,bj->bi", vset.matrices, y) + vset.noise
        else:
            r = y @ self.h_fixed.T + vset.noise
        dims = np.asarray(cfg.dimming)[vset.dim_index]
        csi = None
        if self.model.csi_mode == "perfect":
            csi = vset.matrices if vset.matrices is not None else self.h_fixed
        cost = 0.0
        total = len(vset.messages)
        for start in range(0, total, 50_000):
            stop = min(start + 50_000, total)
            block_csi = None
            if csi is not None:
                block_csi = csi[start:stop] if csi.ndim == 3 else csi
            p = self.model.forward_decoder(r[start:stop], dims[start:stop],
                                           block_csi, train=False)
            cost += cross_entropy_cost(p, vset.messages[start:stop]) * (stop - start)
        cost /= total
        if self.penalty:
            value = penalty_objective(cost, residuals + cfg.dimming,
                                      cfg.dimming, cfg.penalty_mu)
        else:
            value = lagrangian(cost, residuals + np.asarray(cfg.dimming), self.duals)
        feasible = bool(np.max(np.abs(residuals)) <= cfg.feasibility_tol)
        return {"cost": cost, "lagrangian": value,
                "residuals": residuals, "feasible": feasible}


def train(config: TrainConfig) -> TrainResult:
    """Full training loop with feasibility-gated checkpointing."""
    trainer = Trainer(config)
    cfg = trainer.cfg
    report = TrainReport(targets=tuple(cfg.dimming), penalty_mu=cfg.penalty_mu,
                         seed=cfg.seed)
    started = time.perf_counter()
    best = None
    stale = 0
    total_iters = cfg.iterations
    log.info("training %d iterations (batch %d, %s)", total_iters,
             cfg.batch_size,
             "penalty" if trainer.penalty else "primal-dual")
    for t in range(1, total_iters + 1):
        batch = trainer.next_batch()
        try:
            metrics = trainer.step(batch)
        except FloatingPointError as exc:
            log.error("iteration %d: %s; stopping", t, exc)
            report.diverged = True
            break
        if not np.isfinite(metrics["lagrangian"]):
            log.error("iteration %d: non-finite objective; stopping", t)
            report.diverged = True
            break
        report.iterations.append({
            "iteration": t, "cost": metrics["cost"],
            "lagrangian": metrics["lagrangian"],
            "residuals": np.asarray(metrics["residuals"]).tolist(),
            "lambdas": [] if metrics["lambdas"] is None
                       else np.asarray(metrics["lambdas"]).tolist(),
        })
        if t % cfg.validation_cadence == 0 or t == total_iters:
            val = trainer.validate()
            checkpointed = False
            if val["feasible"]:
                report.best_feasible_cost = min(report.best_feasible_cost,
                                                val["cost"])
            if val["feasible"] and val["lagrangian"] <= report.l_best:
                report.l_best = val["lagrangian"]
                report.best_iteration = t
                best = (trainer.model.copy(),
                        None if trainer.duals is None else trainer.duals.copy())
                checkpointed = True
                stale = 0
            else:
                stale += 1
            report.validations.append({
                "iteration": t, "cost": val["cost"],
                "lagrangian": val["lagrangian"],
                "residuals": val["residuals"].tolist(),
                "feasible": val["feasible"], "checkpointed": checkpointed,
            })
            if cfg.patience is not None and stale >= cfg.patience:
                log.info("no improvement in %d validations; stopping at %d",
                         stale, t)
                break
    report.wall_clock = time.perf_counter() - started
    if best is not None:
        model, duals = best
        feasible = True
    else:
        model, duals = trainer.model, trainer.duals
        feasible = False
        log.warning("no feasible checkpoint found; returning final iterate")
    report.feasible = feasible
    final = [cb.average_power(cb.extract_codebook(model, trainer.binarizer, d),
                              cfg.led) - d for d in cfg.dimming]
    report.final_residuals = tuple(final)
    return TrainResult(model=model, binarizer=trainer.binarizer, duals=duals,
                       report=report, feasible=feasible, config=cfg)
