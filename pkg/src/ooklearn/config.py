"""Run configuration: dataclasses, the plain-text config format, defaults.

Config files are INI-style sections; every key has a flag-free default so a
minimal file is valid.  ``default_config_text`` is the documented template
the CLI prints with ``--print-default-config``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .channel import ChannelSpec, KINGBRIGHT_LED, LINEAR_LED, LedModel, load_matrix


class ConfigError(ValueError):
    """Invalid configuration; message names the file location when known."""


@dataclass
class TrainConfig:
    n: int = 8
    k: int = 2                               # bits per message, M = 2**k
    dimming: tuple = (2.0, 2.5, 3.0, 3.5, 4.0)
    batch_size: int = 500
    learning_rate: float = 1e-3
    dual_learning_rate: float | None = None  # None -> learning_rate
    train_samples: int | None = None         # None -> 500000 * M
    validation_samples: int | None = None    # None -> 500000 * M
    validation_cadence: int = 100
    feasibility_tol: float = 0.05
    rho: float = 3e-6
    penalty_mu: float | None = None          # set -> quadratic-penalty training
    noise_variance: float = 0.1
    seed: int = 0
    arch_preset: str = "base"
    batch_norm: bool = True
    csi_mode: str = "fixed"
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    led: LedModel = LINEAR_LED
    range_bound: float = 4.0
    clamp_duals: bool = False
    patience: int | None = None              # validation checks without improvement

    @property
    def m(self):
        return 2 ** self.k

    def validate(self):
        if self.n < 2:
            raise ConfigError("code length n must be at least 2")
        if self.k < 1:
            raise ConfigError("bits per message k must be at least 1")
        if not self.dimming:
            raise ConfigError("dimming targets must not be empty (dimming.targets)")
        if list(self.dimming) != sorted(set(self.dimming)):
            raise ConfigError("dimming targets must be strictly increasing")
        for d in self.dimming:
            if not 0 < d < self.n:
                raise ConfigError(f"dimming target {d} outside (0, {self.n})")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.rho < 0:
            raise ConfigError("rho must be non-negative")
        if self.penalty_mu is not None and self.penalty_mu < 0:
            raise ConfigError("penalty mu must be non-negative")
        if self.feasibility_tol <= 0:
            raise ConfigError("feasibility tolerance must be positive")
        if self.validation_cadence < 1:
            raise ConfigError("validation cadence must be positive")
        if self.noise_variance < 0:
            raise ConfigError("noise variance must be non-negative")
        if self.range_bound <= 0:
            raise ConfigError("binarizer range bound must be positive")
        if self.csi_mode == "perfect" and not self.channel.random_per_sample:
            # permitted (vec(H) of a constant channel), just unusual; no error
            pass
        return self

    def resolved(self):
        """Copy with derived defaults filled in."""
        cfg = dataclasses.replace(self)
        if cfg.train_samples is None:
            cfg.train_samples = 500_000 * cfg.m
        if cfg.validation_samples is None:
            cfg.validation_samples = 500_000 * cfg.m
        if cfg.dual_learning_rate is None:
            cfg.dual_learning_rate = cfg.learning_rate
        cfg.channel = dataclasses.replace(cfg.channel,
                                          noise_variance=cfg.noise_variance)
        return cfg.validate()

    @property
    def iterations(self):
        samples = self.train_samples if self.train_samples is not None \
            else 500_000 * self.m
        return -(-samples // self.batch_size)


@dataclass
class EvalConfig:
    snr_db: tuple = (-2.0, 0.0, 2.0, 4.0, 6.0, 8.0)
    trials: int = 100_000
    dimming: tuple | None = None             # None -> the system's targets
    seed: int = 0
    threads: int = 1
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    led: LedModel = LINEAR_LED

    def validate(self):
        if not self.snr_db:
            raise ConfigError("eval SNR grid must not be empty (eval.snr_db)")
        if self.trials < 1:
            raise ConfigError("trial count must be positive")
        if self.threads < 1:
            raise ConfigError("thread count must be positive")
        return self


DEFAULT_CONFIG_TEXT = """\
# ooklearn run configuration (INI syntax; '#' and ';' start comments)

[run]
seed = 1
out_dir = runs/demo

[model]
# code length and bits per message (message count M = 2^k)
n = 8
k = 2
# hidden-width preset: base (3 hidden layers), wide (4), deep (5)
architecture = base
# channel knowledge at the decoder: fixed | perfect | none
csi = fixed
batch_norm = true

[dimming]
# target average weights (or optical powers for a nonlinear LED)
targets = 2, 2.5, 3, 3.5, 4
# binarizer sigmoid input range half-width
range_bound = 4.0

[train]
# one copy of every (message, target) pair per stratified batch (M * targets)
batch_size = 20
learning_rate = 1e-3
# multiplier ascent step; defaults to learning_rate when empty
dual_learning_rate = 1e-3
# desk-scale sample budgets; the reference setting is 500000 * M for both
train_samples = 400000
validation_samples = 20000
validation_cadence = 100
feasibility_tol = 0.05
# augmented-term weight for primal-dual training
rho = 3e-6
# set to train with a quadratic penalty instead of primal-dual
penalty_mu =
noise_variance = 0.1
# clamp multipliers at zero after each ascent step
clamp_duals = false
# validation checks without improvement before stopping early; empty = run full budget
patience =

[channel]
# identity | isi | file:<path to whitespace-separated square matrix>
matrix = identity
# literal uses the geometric delay ratio as-is; fractional wraps it into [0, 1)
isi_delay_mode = literal

[led]
# linear | kingbright | custom
kind = linear
# used only when kind = custom: polynomial weights for powers 1..K and the
# one-slot memory factor
coefficients = 1.0
memory = 0.0

[eval]
snr_db = -2, 0, 2, 4, 6, 8
trials = 100000
# dimming targets to evaluate; empty = the trained targets
targets =
"""


def default_config_text():
    return DEFAULT_CONFIG_TEXT


def _find_line(text, section, key):
    in_section = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            in_section = stripped[1:-1].strip() == section
        elif in_section and stripped.split("=")[0].strip() == key:
            return lineno
    return None


class ConfigFile:
    """Parsed config file with typed getters and line-precise errors."""

    KNOWN = {
        "run": {"seed", "out_dir"},
        "model": {"n", "k", "architecture", "csi", "batch_norm"},
        "dimming": {"targets", "range_bound"},
        "train": {"batch_size", "learning_rate", "dual_learning_rate",
                  "train_samples", "validation_samples", "validation_cadence",
                  "feasibility_tol", "rho", "penalty_mu", "noise_variance",
                  "clamp_duals", "patience"},
        "channel": {"matrix", "isi_delay_mode"},
        "led": {"kind", "coefficients", "memory"},
        "eval": {"snr_db", "trials", "targets", "threads"},
    }

    def __init__(self, path):
        self.path = str(path)
        with open(path, "r", encoding="utf-8") as fh:
            self.text = fh.read()
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(self.text, source=self.path)
        except configparser.Error as exc:
            raise ConfigError(f"{self.path}: {exc}") from None
        self.parser = parser
        for section in parser.sections():
            if section not in self.KNOWN:
                raise ConfigError(f"{self.path}: unknown section [{section}]")
            for key in parser[section]:
                if key not in self.KNOWN[section]:
                    where = _find_line(self.text, section, key)
                    raise ConfigError(f"{self.path}: line {where}: "
                                      f"unknown key {key!r} in [{section}]")

    def _raw(self, section, key):
        try:
            value = self.parser.get(section, key).strip()
        except (configparser.NoSectionError, configparser.NoOptionError):
            return None
        return value if value else None

    def _fail(self, section, key, value, want):
        where = _find_line(self.text, section, key)
        at = f"line {where}: " if where else ""
        raise ConfigError(f"{self.path}: {at}[{section}] {key} = {value!r}: "
                          f"expected {want}")

    def get_int(self, section, key, default=None):
        value = self._raw(section, key)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            self._fail(section, key, value, "an integer")

    def get_float(self, section, key, default=None):
        value = self._raw(section, key)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError:
            self._fail(section, key, value, "a number")

    def get_bool(self, section, key, default=None):
        value = self._raw(section, key)
        if value is None:
            return default
        low = value.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        self._fail(section, key, value, "a boolean")

    def get_str(self, section, key, default=None):
        value = self._raw(section, key)
        return default if value is None else value

    def get_floats(self, section, key, default=None):
        value = self._raw(section, key)
        if value is None:
            return default
        try:
            return tuple(float(tok) for tok in value.replace(",", " ").split())
        except ValueError:
            self._fail(section, key, value, "a list of numbers")

    def train_config(self):
        get = self
        channel = self._channel_spec()
        cfg = TrainConfig(
            n=get.get_int("model", "n", 8),
            k=get.get_int("model", "k", 2),
            dimming=get.get_floats("dimming", "targets", (2.0, 2.5, 3.0, 3.5, 4.0)),
            batch_size=get.get_int("train", "batch_size", 500),
            learning_rate=get.get_float("train", "learning_rate", 1e-3),
            dual_learning_rate=get.get_float("train", "dual_learning_rate"),
            train_samples=get.get_int("train", "train_samples"),
            validation_samples=get.get_int("train", "validation_samples"),
            validation_cadence=get.get_int("train", "validation_cadence", 100),
            feasibility_tol=get.get_float("train", "feasibility_tol", 0.05),
            rho=get.get_float("train", "rho", 3e-6),
            penalty_mu=get.get_float("train", "penalty_mu"),
            noise_variance=get.get_float("train", "noise_variance", 0.1),
            seed=get.get_int("run", "seed", 0),
            arch_preset=get.get_str("model", "architecture", "base"),
            batch_norm=get.get_bool("model", "batch_norm", True),
            csi_mode=get.get_str("model", "csi", "fixed"),
            channel=channel,
            led=self._led_model(),
            range_bound=get.get_float("dimming", "range_bound", 4.0),
            clamp_duals=get.get_bool("train", "clamp_duals", False),
            patience=get.get_int("train", "patience"),
        )
        cfg.validate()
        return cfg

    def eval_config(self):
        cfg = EvalConfig(
            snr_db=self.get_floats("eval", "snr_db", (-2.0, 0.0, 2.0, 4.0, 6.0, 8.0)),
            trials=self.get_int("eval", "trials", 100_000),
            dimming=self.get_floats("eval", "targets"),
            seed=self.get_int("run", "seed", 0),
            threads=self.get_int("eval", "threads", 1),
            channel=self._channel_spec(),
            led=self._led_model(),
        )
        cfg.validate()
        return cfg

    def out_dir(self):
        return self.get_str("run", "out_dir")

    def _channel_spec(self):
        matrix = self.get_str("channel", "matrix", "identity")
        delay = self.get_str("channel", "isi_delay_mode", "literal")
        if matrix == "identity":
            return ChannelSpec(kind="identity", delay_mode=delay)
        if matrix == "isi":
            return ChannelSpec(kind="isi", delay_mode=delay)
        if matrix.startswith("file:"):
            try:
                loaded = load_matrix(matrix[5:])
            except OSError as exc:
                raise ConfigError(f"{self.path}: [channel] matrix: {exc}") from None
            return ChannelSpec(kind="fixed", matrix=loaded, delay_mode=delay)
        self._fail("channel", "matrix", matrix, "identity, isi, or file:<path>")

    def _led_model(self):
        kind = self.get_str("led", "kind", "linear")
        if kind == "linear":
            return LINEAR_LED
        if kind == "kingbright":
            return KINGBRIGHT_LED
        if kind == "custom":
            coeffs = self.get_floats("led", "coefficients", (1.0,))
            memory = self.get_float("led", "memory", 0.0)
            return LedModel(tuple(coeffs), memory)
        self._fail("led", "kind", kind, "linear, kingbright, or custom")
