"""Command-line interface.

Sub-commands: ``train`` (constrained transceiver training), ``eval``
(Monte Carlo SER for a checkpoint or codebook), ``baseline``
(constant-weight-code search), ``audit`` (codebook report), ``compare``
(two eval reports).  Every run writes a manifest; rerunning with an
identical manifest reproduces every artifact byte for byte (timestamps live
only in the manifest).

Exit codes: 0 success, 1 bad configuration or input, 2 usage error (from
argparse), 3 finished but infeasible without ``--allow-infeasible``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, plots
from .baseline import CsiModel, SearchConfig, search_codebook
from .channel import ChannelSpec, KINGBRIGHT_LED, LINEAR_LED
from .checkpoint import load_checkpoint, save_checkpoint
from .codebook import (CodebookFormatError, FIXTURE_IDS, audit, load_codebook,
                       load_fixture, save_codebook)
from .config import (ConfigError, ConfigFile, EvalConfig, TrainConfig,
                     default_config_text)
from .evaluate import DnnSystem, MlSystem, compare, load_report, measure_ser
from .training import train

log = logging.getLogger("ooklearn")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 3


def _add_common(parser):
    parser.add_argument("--config", metavar="FILE", help="run configuration file")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker count for evaluation (default 1, deterministic)")
    parser.add_argument("--out-dir", metavar="DIR", help="artifact directory")
    parser.add_argument("--allow-infeasible", action="store_true",
                        help="exit 0 even when no feasible checkpoint was found")
    parser.add_argument("--isi-delay-mode", choices=("literal", "fractional"),
                        help="override the ISI delay handling")
    parser.add_argument("--csi", metavar="MODE",
                        help="channel knowledge: perfect, none, or perturbed:<var>")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ooklearn",
        description="Learned on-off-keying codebooks and decoders for "
                    "dimmable visible-light links.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--print-default-config", action="store_true",
                        help="print the documented default configuration and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="train a constrained transceiver")
    _add_common(p)

    p = sub.add_parser("eval", help="measure SER for a trained model or codebook")
    _add_common(p)
    p.add_argument("--checkpoint", metavar="FILE", help="trained model to evaluate")
    p.add_argument("--codebook", metavar="FILE", action="append", default=[],
                   help="codebook file for ML decoding (repeatable)")

    p = sub.add_parser("baseline", help="search a constant-weight codebook")
    _add_common(p)
    p.add_argument("--n", type=int, help="code length")
    p.add_argument("--m", type=int, help="codebook size")
    p.add_argument("--d", type=float, help="dimming target")
    p.add_argument("--constraint", choices=("strict", "relaxed", "nonlinear"),
                   default="strict")
    p.add_argument("--led", choices=("linear", "kingbright"), default="linear")
    p.add_argument("--target-distance", type=int, default=None)
    p.add_argument("--max-iter", type=int, default=20_000)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--power-tol", type=float, default=0.05)

    p = sub.add_parser("audit", help="report codebook weight/distance statistics")
    p.add_argument("path", nargs="?", help="codebook file")
    p.add_argument("--fixture", choices=FIXTURE_IDS,
                   help="audit a bundled reference codebook instead")

    p = sub.add_parser("compare", help="compare two eval reports")
    _add_common(p)
    p.add_argument("--a", required=True, metavar="CSV", help="first eval report")
    p.add_argument("--b", required=True, metavar="CSV", help="second eval report")
    p.add_argument("--target-ser", type=float, default=1e-3)
    return parser


def _parse_csi(text):
    if text in ("perfect", "none"):
        return CsiModel(mode=text)
    if text.startswith("perturbed:"):
        try:
            return CsiModel(mode="perturbed", variance=float(text.split(":", 1)[1]))
        except ValueError:
            raise ConfigError(f"bad --csi value {text!r}; "
                              f"expected perturbed:<variance>") from None
    raise ConfigError(f"bad --csi value {text!r}; "
                      f"expected perfect, none, or perturbed:<var>")


def _config_file(args):
    return ConfigFile(args.config) if args.config else None


def _out_dir(args, cfg_file, fallback):
    out = args.out_dir or (cfg_file.out_dir() if cfg_file else None) or fallback
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


class Manifest:
    """Run record: configuration snapshot, seeds, artifacts, timing."""

    def __init__(self, command, args):
        self.data = {
            "tool": "ooklearn",
            "version": __version__,
            "command": command,
            "argv": sys.argv[1:],
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "artifacts": [],
        }
        self._t0 = time.perf_counter()

    def add_artifact(self, path):
        self.data["artifacts"].append(str(path))

    def set(self, key, value):
        self.data[key] = value

    def write(self, path):
        self.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.data["wall_clock_seconds"] = round(time.perf_counter() - self._t0, 3)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _config_snapshot(cfg):
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, ChannelSpec):
            value = {"kind": value.kind,
                     "noise_variance": value.noise_variance,
                     "delay_mode": value.delay_mode,
                     "matrix": None if value.matrix is None
                               else np.asarray(value.matrix).tolist()}
        elif dataclasses.is_dataclass(value) and not isinstance(value, type):
            value = dataclasses.asdict(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[f.name] = value
    return out


def cmd_train(args):
    cfg_file = _config_file(args)
    cfg = cfg_file.train_config() if cfg_file else TrainConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.isi_delay_mode:
        cfg = dataclasses.replace(
            cfg, channel=dataclasses.replace(cfg.channel,
                                             delay_mode=args.isi_delay_mode))
    if args.csi:
        csi = _parse_csi(args.csi)
        if csi.mode == "perturbed":
            raise ConfigError("--csi perturbed applies to ML evaluation only")
        cfg = dataclasses.replace(cfg, csi_mode=csi.mode)
    out = _out_dir(args, cfg_file, "runs/train")
    manifest = Manifest("train", args)
    cfg = cfg.resolved()
    manifest.set("config", _config_snapshot(cfg))
    manifest.set("seed", cfg.seed)

    result = train(cfg)

    ckpt_path = out / "checkpoint.ckpt"
    meta = {
        "dimming": list(cfg.dimming),
        "seed": cfg.seed,
        "feasible": result.feasible,
        "noise_variance": cfg.noise_variance,
        "channel": {"kind": cfg.channel.kind,
                    "delay_mode": cfg.channel.delay_mode,
                    "matrix": None if cfg.channel.matrix is None
                              else np.asarray(cfg.channel.matrix).tolist()},
        "led": {"coefficients": list(cfg.led.coefficients),
                "memory": cfg.led.memory},
    }
    save_checkpoint(ckpt_path, result.model, result.binarizer, result.duals, meta)
    manifest.add_artifact(ckpt_path)

    trace_path = out / "trace.csv"
    result.report.write_trace(trace_path)
    manifest.add_artifact(trace_path)

    report_path = out / "report.json"
    summary = result.report.summary()
    summary["codebooks"] = {}
    for d, book in sorted(result.codebooks().items()):
        path = out / f"codebook_d{d:g}.txt"
        save_codebook(book, path)
        manifest.add_artifact(path)
        a = audit(book)
        summary["codebooks"][f"{d:g}"] = {
            "average_weight": a.average_weight,
            "min_distance": a.min_distance,
            "duplicates": a.duplicates,
        }
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_artifact(report_path)

    fig_path = out / "trace.png"
    plots.save_training_figure(result.report, fig_path)
    manifest.add_artifact(fig_path)

    manifest.set("feasible", result.feasible)
    manifest.write(out / "manifest.json")
    for d, info in sorted(summary["codebooks"].items()):
        print(f"d={d}: average weight {info['average_weight']:.4f}, "
              f"min distance {info['min_distance']}")
    if not result.feasible:
        print("WARNING: no feasible checkpoint found", file=sys.stderr)
        return EXIT_OK if args.allow_infeasible else EXIT_INFEASIBLE
    print(f"feasible checkpoint at iteration {result.report.best_iteration} "
          f"written to {ckpt_path}")
    return EXIT_OK


def _eval_config(args, cfg_file, fallback_dims, fallback_channel, fallback_led):
    if cfg_file:
        cfg = cfg_file.eval_config()
    else:
        cfg = EvalConfig()
    if cfg.dimming is None and fallback_dims is not None:
        cfg = dataclasses.replace(cfg, dimming=tuple(fallback_dims))
    if not args.config and fallback_channel is not None:
        cfg = dataclasses.replace(cfg, channel=fallback_channel,
                                  led=fallback_led)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = dataclasses.replace(cfg, threads=args.threads)
    if args.isi_delay_mode:
        cfg = dataclasses.replace(
            cfg, channel=dataclasses.replace(cfg.channel,
                                             delay_mode=args.isi_delay_mode))
    return cfg.validate()


def _checkpoint_channel(meta):
    info = meta.get("channel")
    if not info:
        return None, None
    matrix = None if info.get("matrix") is None else np.array(info["matrix"])
    channel = ChannelSpec(kind=info["kind"], matrix=matrix,
                          noise_variance=meta.get("noise_variance", 0.1),
                          delay_mode=info.get("delay_mode", "literal"))
    led_info = meta.get("led", {"coefficients": [1.0], "memory": 0.0})
    led = LINEAR_LED if tuple(led_info["coefficients"]) == (1.0,) \
        and led_info["memory"] == 0.0 \
        else _led_from(led_info)
    return channel, led


def _led_from(info):
    from .channel import LedModel
    return LedModel(tuple(info["coefficients"]), info["memory"])


def cmd_eval(args):
    if bool(args.checkpoint) == bool(args.codebook):
        raise ConfigError("pass exactly one of --checkpoint or --codebook")
    cfg_file = _config_file(args)
    out = _out_dir(args, cfg_file, "runs/eval")
    manifest = Manifest("eval", args)

    if args.checkpoint:
        bundle = load_checkpoint(args.checkpoint)
        channel, led = _checkpoint_channel(bundle.meta)
        cfg = _eval_config(args, cfg_file, bundle.meta.get("dimming"),
                           channel, led)
        system = DnnSystem(bundle.model, bundle.binarizer)
        manifest.set("checkpoint", str(args.checkpoint))
    else:
        books = {}
        for path in args.codebook:
            book = load_codebook(path)
            books[float(book.dimming)] = book
        csi = _parse_csi(args.csi) if args.csi else CsiModel()
        cfg = _eval_config(args, cfg_file, sorted(books), None, None)
        system = MlSystem(books, cfg.led, csi)
        manifest.set("codebooks", [str(p) for p in args.codebook])
        manifest.set("csi", {"mode": csi.mode, "variance": csi.variance})
    if cfg.dimming is None:
        raise ConfigError("no dimming targets: set eval.targets or use a "
                          "checkpoint/codebook that carries them")
    manifest.set("seed", cfg.seed)

    report = measure_ser(system, cfg)
    csv_path = out / "eval.csv"
    report.write_csv(csv_path)
    manifest.add_artifact(csv_path)
    txt_path = out / "summary.txt"
    with open(txt_path, "w", encoding="ascii") as fh:
        fh.write(report.summary_text())
    manifest.add_artifact(txt_path)
    fig_path = out / "ser.png"
    plots.save_ser_figure(report, fig_path)
    manifest.add_artifact(fig_path)
    manifest.write(out / "manifest.json")
    print(report.summary_text(), end="")
    return EXIT_OK


def cmd_baseline(args):
    cfg_file = _config_file(args)
    out = _out_dir(args, cfg_file, "runs/baseline")
    manifest = Manifest("baseline", args)
    n = args.n if args.n is not None else 8
    m = args.m if args.m is not None else 4
    if args.d is None:
        raise ConfigError("baseline needs --d (dimming target)")
    led = KINGBRIGHT_LED if args.led == "kingbright" else LINEAR_LED
    cfg = SearchConfig(n=n, m=m, d=args.d, constraint=args.constraint, led=led,
                       target_min_distance=args.target_distance,
                       max_iterations=args.max_iter, restarts=args.restarts,
                       power_tol=args.power_tol)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seed = args.seed if args.seed is not None else 0
    manifest.set("seed", seed)
    manifest.set("search", {"n": n, "m": m, "d": args.d,
                            "constraint": args.constraint, "led": args.led,
                            "max_iterations": args.max_iter,
                            "restarts": args.restarts})
    result = search_codebook(cfg, np.random.default_rng(seed))
    book_path = out / f"baseline_d{args.d:g}.txt"
    save_codebook(result.codebook, book_path)
    manifest.add_artifact(book_path)
    trace_path = out / "search_trace.csv"
    with open(trace_path, "w", encoding="ascii") as fh:
        fh.write("restart,iteration,best_min_distance\n")
        for restart, it, dist in result.trace:
            fh.write(f"{restart},{it},{dist}\n")
    manifest.add_artifact(trace_path)
    manifest.write(out / "manifest.json")
    a = audit(result.codebook)
    print(f"min distance {result.min_distance}, average weight "
          f"{a.average_weight:.4f}, codebook written to {book_path}")
    return EXIT_OK


def cmd_audit(args):
    if bool(args.path) == bool(args.fixture):
        raise ConfigError("pass exactly one of a codebook path or --fixture")
    book = load_fixture(args.fixture) if args.fixture else load_codebook(args.path)
    a = audit(book)
    print(f"codebook: {book.provenance}")
    print(f"N={book.n} M={book.m} d={book.dimming:g}")
    print(f"average weight : {a.average_weight}")
    print(f"min distance   : {a.min_distance}")
    print(f"duplicates     : {a.duplicates}")
    print(f"weights        : {list(a.weights)}")
    return EXIT_OK


def cmd_compare(args):
    cfg_file = _config_file(args)
    out = _out_dir(args, cfg_file, "runs/compare")
    manifest = Manifest("compare", args)
    report_a = load_report(args.a)
    report_b = load_report(args.b)
    result = compare(report_a, report_b, args.target_ser)
    ratio_path = out / "compare.csv"
    gain_path = out / "gains.csv"
    result.write_csv(ratio_path, gain_path)
    manifest.add_artifact(ratio_path)
    manifest.add_artifact(gain_path)
    fig_path = out / "compare.png"
    plots.save_compare_figure(report_a, report_b, fig_path)
    manifest.add_artifact(fig_path)
    manifest.write(out / "manifest.json")
    for g in result.gains:
        gain = "n/a" if g["gain_db"] is None else f"{g['gain_db']:+.2f} dB"
        flag = "" if g["reliable"] else " (unreliable)"
        print(f"d={g['dimming']:g}: gain at SER {args.target_ser:g}: {gain}{flag}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "baseline": cmd_baseline,
            "audit": cmd_audit, "compare": cmd_compare}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if "--print-default-config" in argv:
        print(default_config_text(), end="")
        return EXIT_OK
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_ERROR
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CodebookFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
