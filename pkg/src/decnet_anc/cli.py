"""Command-line front end.

Exit codes: 0 success, 2 validation error, 3 runtime or divergence, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import write_sweep_csv
from .config import ExperimentConfig, load_config
from .decnet import decoupling_residual_db, load_checkpoint, save_checkpoint, train_decnet
from .errors import DivergenceError, InvalidArgumentError, SingularMatrixError, TrainingDivergedError
from .experiments import CANONICAL_TAU, analyze, compare, default_algorithms
from .paths import save_scene
from .simulate import (
    ALGORITHMS,
    complexity_report,
    emse_curve,
    fixed_wiener_controller,
    run_closed_loop,
    write_run_csv,
    write_trace,
)
from .svg import line_plot

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4
OUT_DIR_ENV = "DECNET_ANC_OUT_DIR"
DEFAULT_L_LIST = [32, 64, 128, 192, 256]
CURVE_DECIMATION = 20

CSV_HELP = """\
CSV outputs (written to the output directory):
  scene.json                 synth-paths: sample_rate_hz, primary, secondary, noise_variance[, primary_alternate]
  epsilon_sweep.csv          analyze: L, epsilon_db_theory, epsilon_db_theory_partitioned, epsilon_db_simulated
                             (dB re disturbance power; empty cell where not computed)
  training_loss.csv          train: epoch, loss, loss_db
  compare_emse.csv           compare: time_s, then one EMSE column (dB) per algorithm
  compare_summary.csv        compare: algorithm, steady_state_db, convergence_time_s, pre_event_db, n_runs, n_diverged
  run_<ALG>.csv              run: time_s, emse_db, e_rms_ch1..K
  complexity.csv             complexity: algorithm, macs_per_sample, reported_reference
The output directory is --out-dir, else $DECNET_ANC_OUT_DIR, else the config's output_dir, else ./out.
"""


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON config")
    common.add_argument("--seed", type=int, help="master seed (scene seed for synth-paths, training seed for train)")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--runs", type=int, help="Monte Carlo run count")
    common.add_argument("--format", choices=("csv", "svg", "both"), default="both", help="plot/table outputs")

    p = argparse.ArgumentParser(prog="decnet-anc", description="Multichannel ANC simulation toolkit.",
                                epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    kw = dict(parents=[common], epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub.add_parser("synth-paths", help="generate and save a seeded synthetic scene", **kw)
    sub.add_parser("analyze", help="modeling-error sweep, theory vs simulation", **kw)
    t = sub.add_parser("train", help="train the decoupling network offline", **kw)
    t.add_argument("--epochs", type=int)
    c = sub.add_parser("compare", help="learning curves of several algorithms", **kw)
    c.add_argument("--checkpoint")
    r = sub.add_parser("run", help="simulate one algorithm", **kw)
    r.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    r.add_argument("--checkpoint")
    r.add_argument("--trace", action="store_true", help="also write a binary trace")
    x = sub.add_parser("complexity", help="multiply-accumulate counts per sample", **kw)
    x.add_argument("--algorithm", choices=ALGORITHMS)
    x.add_argument("-K", type=int, default=2)
    x.add_argument("-L", type=int, default=160)
    x.add_argument("--Ls", type=int, default=32)
    x.add_argument("-D", type=int, default=32)
    x.add_argument("-H", type=int, default=512)
    x.add_argument("--Lf", type=int, default=32)
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.runs is not None:
        if args.runs < 1:
            raise InvalidArgumentError("--runs must be >= 1")
        cfg.n_runs = args.runs
    return cfg


def _out_dir(args, cfg) -> Path:
    d = args.out_dir or os.environ.get(OUT_DIR_ENV) or cfg.output_dir or "out"
    d = Path(d)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {d}: {exc}", EXIT_IO) from None
    return d


def _want(args, kind):
    return args.format in (kind, "both")


def _write_text(path, text):
    Path(path).write_text(text)
    print(f"wrote {path}")


def _scene(args, cfg):
    if args.command == "synth-paths" and args.seed is not None:
        synth = dict(cfg.scene.get("synth", {}))
        synth["seed"] = args.seed
        cfg.scene = {"synth": synth}
    return cfg.build_scene()


def _tau(cfg, scene):
    tau = cfg.training.get("tau")
    if tau is None:
        tau = CANONICAL_TAU if scene.primary_direct_delay() > CANONICAL_TAU else None
    return tau


def cmd_synth_paths(args, cfg):
    scene = _scene(args, cfg)
    out = _out_dir(args, cfg) / "scene.json"
    save_scene(scene, out)
    print(json.dumps(scene.summary(), sort_keys=True))
    print(f"wrote {out}")


def cmd_analyze(args, cfg):
    scene = _scene(args, cfg)
    a = cfg.analysis
    L_list = a.get("L_list", DEFAULT_L_LIST)
    seed = args.seed if args.seed is not None else cfg.master_seed
    rows, sim = analyze(scene, L_list, k=a.get("channel", 0), simulate=a.get("simulate", True),
                        n_samples=a.get("n_samples", 1_000_000), n_runs=cfg.n_runs if args.runs else a.get("n_runs", 1),
                        seed=seed)
    out = _out_dir(args, cfg)
    for r, s in zip(rows, sim or [None] * len(rows)):
        extra = "" if s is None else f"  simulated {s:8.2f} dB"
        print(f"L={r['L']:4d}  theory {r['eps_db']:8.2f} dB{extra}")
    if _want(args, "csv"):
        write_sweep_csv(rows, out / "epsilon_sweep.csv", sim)
        print(f"wrote {out / 'epsilon_sweep.csv'}")
    if _want(args, "svg"):
        Ls = [r["L"] for r in rows]
        series = [("theory", Ls, [r["eps_db"] for r in rows])]
        part = [(r["L"], r["eps_db_partitioned"]) for r in rows if r["eps_db_partitioned"] is not None]
        if part:
            series.append(("theory (partitioned)", [p[0] for p in part], [p[1] for p in part]))
        if sim is not None:
            series.append(("simulated", Ls, sim))
        _write_text(out / "epsilon_sweep.svg",
                    line_plot(series, "Modeling error vs controller length", "L (taps)", "modeling error (dB)"))


def cmd_train(args, cfg):
    scene = _scene(args, cfg)
    t = dict(cfg.training)
    if args.epochs is not None:
        t["epochs"] = args.epochs
    if args.seed is not None:
        t["seed"] = args.seed
    t["tau"] = _tau(cfg, scene)
    t.setdefault("epochs", 12)
    if t["epochs"] == 0:
        print("warning: epochs=0, checkpoint is the untrained initialization", file=sys.stderr)
    params, history = train_decnet(scene, **t,
                                   log=lambda ep, loss: print(f"epoch {ep + 1}: loss {10 * np.log10(loss):.2f} dB"))
    out = _out_dir(args, cfg)
    ck = out / "decnet_checkpoint.json"
    save_checkpoint(params, ck, meta={"training": {k: v for k, v in t.items()}, "scene": scene.summary()})
    print(f"wrote {ck}")
    if _want(args, "csv"):
        with open(out / "training_loss.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epoch", "loss", "loss_db"])
            for i, v in enumerate(history):
                wr.writerow([i + 1, f"{v:.10e}", f"{10 * np.log10(v):.6f}"])
        print(f"wrote {out / 'training_loss.csv'}")
    resid = decoupling_residual_db(params, scene)
    print("decoupling residual (dB): " + " ".join(f"{v:.2f}" for v in resid))


def _checkpoint(args, cfg, needed):
    path = getattr(args, "checkpoint", None) or cfg.checkpoint
    if path is None:
        if needed:
            raise InvalidArgumentError("DecNetLMS requested but no checkpoint given (--checkpoint or config)")
        return None
    p = Path(path)
    if not p.is_absolute() and not p.exists():
        p = cfg.base_dir / p
    if not p.exists():
        raise InvalidArgumentError(f"checkpoint {path} not found")
    return load_checkpoint(p)


def cmd_compare(args, cfg):
    scene = _scene(args, cfg)
    tau = _tau(cfg, scene)
    algos = cfg.algorithm_configs(default_tau=tau) if cfg.algorithms else default_algorithms(tau=tau)
    decnet = _checkpoint(args, cfg, any(a.name == "DecNetLMS" for a in algos))
    seed = args.seed if args.seed is not None else cfg.master_seed
    noise = cfg.noise_source(seed)
    events = cfg.scenario_events(scene.sample_rate_hz)
    curves, summary = compare(scene, algos, noise, cfg.duration_s, cfg.n_runs, seed, events, decnet, cfg.window)
    out = _out_dir(args, cfg)
    fs = scene.sample_rate_hz
    n = next(iter(curves.values())).num.size
    idx = np.arange(0, n, CURVE_DECIMATION)
    for s in summary:
        tc = "never" if s.convergence_time_s is None else f"{s.convergence_time_s:.3f} s"
        print(f"{s.algorithm:14s} steady {s.steady_state_db:8.2f} dB  convergence {tc}  diverged {s.n_diverged}")
    if _want(args, "csv"):
        with open(out / "compare_emse.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time_s"] + list(curves))
            db = {k: c.emse_db for k, c in curves.items()}
            for i in idx:
                wr.writerow([f"{i / fs:.6f}"] + [f"{db[k][i]:.6f}" for k in curves])
        with open(out / "compare_summary.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["algorithm", "steady_state_db", "convergence_time_s", "pre_event_db", "n_runs", "n_diverged"])
            for s in summary:
                wr.writerow([s.algorithm, f"{s.steady_state_db:.6f}",
                             "" if s.convergence_time_s is None else f"{s.convergence_time_s:.6f}",
                             "" if s.pre_event_db is None else f"{s.pre_event_db:.6f}", s.n_runs, s.n_diverged])
        print(f"wrote {out / 'compare_emse.csv'}")
        print(f"wrote {out / 'compare_summary.csv'}")
    if _want(args, "svg"):
        series = [(k, idx / fs, c.emse_db[idx]) for k, c in curves.items()]
        _write_text(out / "compare_emse.svg",
                    line_plot(series, "Averaged EMSE learning curves", "time (s)", "EMSE (dB)",
                              markers=[e.at_sample / fs for e in events]))


def cmd_run(args, cfg):
    scene = _scene(args, cfg)
    tau = _tau(cfg, scene)
    match = [a for a in cfg.algorithm_configs(default_tau=tau) if a.name == args.algorithm]
    algo = match[0] if match else default_algorithms(tau=tau, names=[args.algorithm])[0]
    decnet = _checkpoint(args, cfg, algo.name == "DecNetLMS")
    seed = args.seed if args.seed is not None else cfg.master_seed
    noise = cfg.noise_source(seed)
    events = cfg.scenario_events(scene.sample_rate_hz)
    fixed_W = fixed_wiener_controller(scene, noise, algo.L) if algo.name == "FixedWiener" else None
    n = int(round(cfg.duration_s * scene.sample_rate_hz))
    res = run_closed_loop(scene, algo, noise, n, events, seed=(seed, 0), decnet=decnet, fixed_W=fixed_W)
    out = _out_dir(args, cfg)
    if _want(args, "csv"):
        write_run_csv(res, out / f"run_{algo.tag}.csv", cfg.window, CURVE_DECIMATION)
        print(f"wrote {out / f'run_{algo.tag}.csv'}")
    if args.trace:
        write_trace(res, out / f"run_{algo.tag}.trace")
        print(f"wrote {out / f'run_{algo.tag}.trace'}")
    if _want(args, "svg") and res.n_samples:
        curve = emse_curve(res, cfg.window)
        idx = np.arange(0, res.n_samples, CURVE_DECIMATION)
        _write_text(out / f"run_{algo.tag}.svg",
                    line_plot([(algo.tag, idx / res.sample_rate_hz, curve[idx])], f"EMSE, {algo.tag}", "time (s)",
                              "EMSE (dB)", markers=[e.at_sample / res.sample_rate_hz for e in events]))
    if res.diverged:
        raise DivergenceError(f"{algo.tag} diverged after {res.n_samples} samples")


def cmd_complexity(args, cfg):
    names = [args.algorithm] if args.algorithm else list(ALGORITHMS)
    reps = [complexity_report(n, args.K, args.L, args.Ls, args.D, args.H, args.Lf) for n in names]
    for r in reps:
        ref = f"  (reported: {r['reported_reference']}; {r['note']})" if "reported_reference" in r else ""
        print(f"{r['algorithm']:14s} {r['macs_per_sample']:8d} MACs/sample{ref}")
    if _want(args, "csv"):
        out = _out_dir(args, cfg)
        with open(out / "complexity.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["algorithm", "macs_per_sample", "reported_reference"])
            for r in reps:
                wr.writerow([r["algorithm"], r["macs_per_sample"], r.get("reported_reference", "")])
        print(f"wrote {out / 'complexity.csv'}")


COMMANDS = {
    "synth-paths": cmd_synth_paths,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "compare": cmd_compare,
    "run": cmd_run,
    "complexity": cmd_complexity,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (InvalidArgumentError, SingularMatrixError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DivergenceError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - surface as runtime failure with a message
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
