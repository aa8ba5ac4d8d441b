"""Monte Carlo symbol-error-rate measurement and system comparison.

SNR is defined as average received symbol energy over noise variance, with
the symbol energy tied to the dimming target (d/N for a linear LED, the
codebook's mean emitted power otherwise).  Reports carry binomial confidence
intervals; comparisons interpolate dB gaps at a target SER on a log scale.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from . import codebook as cb
from .baseline import CsiModel, ml_decode, perturb_csi
from .channel import LINEAR_LED, apply_channel, led_forward
from .config import EvalConfig

Z95 = 1.959963984540054
CHUNK = 50_000


def q_function(x):
    """Gaussian tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / np.sqrt(2.0))


def snr_to_sigma(d, n, snr_db, led=LINEAR_LED, codebook=None):
    """Noise variance realizing ``snr_db`` at dimming target ``d``.

    Linear LED: symbol energy is d/N.  Nonlinear: the codebook's average
    emitted power per slot replaces d/N.
    """
    if d <= 0:
        raise ValueError("dimming target must be positive")
    linear_snr = 10.0 ** (snr_db / 10.0)
    if led.is_linear:
        energy = d / n
    elif codebook is None:
        raise ValueError("nonlinear LED needs a codebook to set symbol energy")
    else:
        energy = cb.average_power(codebook, led) / n
    return energy / linear_snr


def binomial_interval(errors, trials, z=Z95):
    """Wilson score interval for an error proportion."""
    if trials < 1:
        raise ValueError("trials must be positive")
    phat = errors / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * np.sqrt(phat * (1 - phat) / trials
                       + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if errors == 0 else float(max(0.0, center - half))
    hi = 1.0 if errors == trials else float(min(1.0, center + half))
    return lo, hi


@dataclass
class DnnSystem:
    """Trained transceiver: deterministic codebook plus the network decoder."""

    model: object
    binarizer: object
    label: str = "dnn"

    @property
    def m(self):
        return self.model.m

    def codebook_for(self, d):
        return cb.extract_codebook(self.model, self.binarizer, d)

    def decode(self, r, d, h, rng):
        csi = h if self.model.csi_mode == "perfect" else None
        p = self.model.forward_decoder(r, np.full(len(r), float(d)), csi,
                                       train=False)
        return np.argmax(p, axis=1)


@dataclass
class MlSystem:
    """Classical receiver: ML decoding of a fixed codebook."""

    codebooks: dict                 # dimming target -> Codebook
    led: object = LINEAR_LED
    csi: CsiModel = field(default_factory=CsiModel)
    label: str = "ml"

    @property
    def m(self):
        return next(iter(self.codebooks.values())).m

    def codebook_for(self, d):
        if float(d) not in self.codebooks:
            raise ValueError(f"no codebook for dimming target {d}")
        return self.codebooks[float(d)]

    def decode(self, r, d, h, rng):
        book = self.codebook_for(d)
        if self.csi.mode == "none":
            known = np.eye(book.n)
        elif self.csi.mode == "perturbed":
            if h.ndim == 2:
                known = perturb_csi(h, self.csi.variance, rng)
            else:
                known = np.stack([perturb_csi(hi, self.csi.variance, rng)
                                  for hi in h])
        else:
            known = h
        return ml_decode(r, book, known, self.led)


@dataclass(frozen=True)
class EvalRow:
    system: str
    dimming: float
    snr_db: float
    trials: int
    errors: int
    ser: float
    ci_low: float
    ci_high: float


@dataclass
class EvalReport:
    label: str
    rows: list
    audits: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def row_for(self, d, snr_db):
        for row in self.rows:
            if row.dimming == d and row.snr_db == snr_db:
                return row
        raise KeyError((d, snr_db))

    def dimming_targets(self):
        seen = []
        for row in self.rows:
            if row.dimming not in seen:
                seen.append(row.dimming)
        return seen

    def write_csv(self, path):
        lines = ["system,dimming,snr_db,trials,errors,ser,ci_low,ci_high"]
        for r in self.rows:
            lines.append(",".join([r.system, repr(r.dimming), repr(r.snr_db),
                                   str(r.trials), str(r.errors), repr(r.ser),
                                   repr(r.ci_low), repr(r.ci_high)]))
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")

    def summary_text(self):
        head = f"{'system':<10} {'d':>5} {'SNR dB':>8} {'trials':>9} " \
               f"{'SER':>12} {'95% CI':>25}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.system:<10} {r.dimming:>5g} {r.snr_db:>8.2f} "
                         f"{r.trials:>9d} {r.ser:>12.4e} "
                         f"[{r.ci_low:.4e}, {r.ci_high:.4e}]")
        return "\n".join(lines) + "\n"


def load_report(path):
    """Read back a CSV written by ``EvalReport.write_csv``."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    rows = []
    label = "?"
    for line in lines[1:]:
        if not line.strip():
            continue
        sys_, d, snr, trials, errors, ser, lo, hi = line.split(",")
        label = sys_
        rows.append(EvalRow(sys_, float(d), float(snr), int(trials),
                            int(errors), float(ser), float(lo), float(hi)))
    return EvalReport(label=label, rows=rows)


def _simulate_chunk(system, book, d, sigma2, count, channel, led, seed):
    rng = np.random.default_rng(seed)
    n, m = book.n, book.m
    errors = 0
    done = 0
    while done < count:
        block = min(CHUNK, count - done)
        msgs = rng.integers(0, m, size=block)
        s = book.words[msgs].astype(np.float64)
        y = led_forward(s, led)
        if channel.random_per_sample:
            h = channel.draw_matrices(n, block, rng)
        else:
            h = channel.fixed_matrix(n)
        r = apply_channel(y, h, sigma2, rng)
        guess = system.decode(r, d, h, rng)
        errors += int(np.count_nonzero(guess != msgs))
        done += block
    return errors


def measure_ser(system, config: EvalConfig) -> EvalReport:
    """Monte Carlo SER over the (dimming, SNR) grid with binomial CIs.

    Trials are partitioned across ``config.threads`` workers with
    independently seeded streams; the partitioning (not the thread count)
    fixes the result, and any thread count reproduces SER within CI.
    """
    config.validate()
    dims = config.dimming
    if dims is None:
        raise ValueError("evaluation needs explicit dimming targets")
    root = np.random.SeedSequence(config.seed)
    rows = []
    audits = {}
    for d in dims:
        book = system.codebook_for(d)
        audits[d] = cb.audit(book)
        for snr_db in config.snr_db:
            sigma2 = snr_to_sigma(d, book.n, snr_db, config.led, book)
            sizes = [config.trials // config.threads] * config.threads
            for i in range(config.trials % config.threads):
                sizes[i] += 1
            seeds = root.spawn(len(sizes))
            args = [(system, book, d, sigma2, size, config.channel, config.led,
                     seed) for size, seed in zip(sizes, seeds) if size > 0]
            if config.threads > 1:
                with ThreadPoolExecutor(max_workers=config.threads) as pool:
                    errors = sum(pool.map(lambda a: _simulate_chunk(*a), args))
            else:
                errors = sum(_simulate_chunk(*a) for a in args)
            ser = errors / config.trials
            lo, hi = binomial_interval(errors, config.trials)
            rows.append(EvalRow(system.label, float(d), float(snr_db),
                                config.trials, errors, ser, lo, hi))
    return EvalReport(label=system.label, rows=rows, audits=audits,
                      meta={"trials": config.trials, "seed": config.seed})


def snr_at_ser(report, d, target_ser):
    """SNR achieving ``target_ser`` by log-linear interpolation; None if
    the grid does not bracket the target with positive SER values."""
    pts = sorted(((r.snr_db, r.ser) for r in report.rows if r.dimming == d))
    for (s0, e0), (s1, e1) in zip(pts, pts[1:]):
        if e0 <= 0 or e1 <= 0:
            continue
        if e0 >= target_ser >= e1 and e0 != e1:
            t = (np.log10(target_ser) - np.log10(e0)) \
                / (np.log10(e1) - np.log10(e0))
            return float(s0 + t * (s1 - s0))
    return None


@dataclass
class Comparison:
    label_a: str
    label_b: str
    target_ser: float
    ratios: list       # dicts: dimming, snr_db, ser_a, ser_b, ratio, ci_overlap
    gains: list        # dicts: dimming, snr_a, snr_b, gain_db, reliable

    def write_csv(self, ratio_path, gain_path):
        lines = ["dimming,snr_db,ser_a,ser_b,ratio,ci_overlap"]
        for r in self.ratios:
            ratio = "" if r["ratio"] is None else repr(r["ratio"])
            lines.append(",".join([repr(r["dimming"]), repr(r["snr_db"]),
                                   repr(r["ser_a"]), repr(r["ser_b"]), ratio,
                                   str(int(r["ci_overlap"]))]))
        with open(ratio_path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
        lines = ["dimming,target_ser,snr_a,snr_b,gain_db,reliable"]
        for g in self.gains:
            fmt = lambda x: "" if x is None else repr(x)
            lines.append(",".join([repr(g["dimming"]), repr(self.target_ser),
                                   fmt(g["snr_a"]), fmt(g["snr_b"]),
                                   fmt(g["gain_db"]), str(int(g["reliable"]))]))
        with open(gain_path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")


def compare(report_a, report_b, target_ser=1e-3) -> Comparison:
    """SER ratios at matching grid points and dB gaps at the target SER.

    The gain is ``snr_b - snr_a`` at the target SER: positive means system A
    reaches it at lower SNR.  Ratio rows are flagged when the confidence
    bands overlap; gains are flagged unreliable when either side cannot be
    interpolated.
    """
    ratios = []
    gains = []
    dims_a = report_a.dimming_targets()
    for d in dims_a:
        if d not in report_b.dimming_targets():
            continue
        snrs_a = {r.snr_db for r in report_a.rows if r.dimming == d}
        snrs_b = {r.snr_db for r in report_b.rows if r.dimming == d}
        for snr in sorted(snrs_a & snrs_b):
            ra = report_a.row_for(d, snr)
            rb = report_b.row_for(d, snr)
            overlap = not (ra.ci_high < rb.ci_low or rb.ci_high < ra.ci_low)
            ratio = None if rb.ser == 0 else ra.ser / rb.ser
            ratios.append({"dimming": d, "snr_db": snr, "ser_a": ra.ser,
                           "ser_b": rb.ser, "ratio": ratio,
                           "ci_overlap": overlap})
        sa = snr_at_ser(report_a, d, target_ser)
        sb = snr_at_ser(report_b, d, target_ser)
        gain = None if sa is None or sb is None else sb - sa
        gains.append({"dimming": d, "snr_a": sa, "snr_b": sb,
                      "gain_db": gain,
                      "reliable": sa is not None and sb is not None})
    return Comparison(report_a.label, report_b.label, target_ser, ratios, gains)
