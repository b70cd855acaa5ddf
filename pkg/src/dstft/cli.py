"""``dstft`` command-line tool.

Subcommands
-----------
spectrogram  transform a signal file with a fixed plan
optimize     fit window lengths / frame positions to an unsupervised loss
taskfit      task-driven fits (frequency tracking, classification)
gradcheck    analytic gradients against finite differences
bench        forward/backward timing table

Exit codes: 0 success, 1 check failure, 2 bad flags or parameter domain,
3 I/O or parse failure, 4 numeric failure, 5 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import pipelines as pl
from . import verify
from .objectives import (
    ObjectiveConfig,
    entropy_nltv_objective,
    entropy_objective,
    kurtosis_coverage_objective,
)
from .optimize import DivergenceError, OptimConfig, fit
from .signals import (
    FileFormat,
    ParseError,
    ScenarioKind,
    SyntheticScenario,
    atomic_write,
    format_csv,
    generate,
    load,
)
from .transform import (
    LengthField,
    LengthMode,
    PositionField,
    Signal,
    forward,
    make_plan,
    resolve_positions,
)
from .window import THETA_MIN

log = logging.getLogger("dstft")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_DIVERGED = 0, 1, 2, 3, 4, 5
PGM_RANGE_DB = 80.0


class UsageError(ValueError):
    """Flag combination or value that the command cannot accept."""


# -- images and file helpers ----------------------------------------------------

def pgm_bytes(image: np.ndarray) -> bytes:
    """Binary (P5) 8-bit PGM of a ``(rows, cols)`` uint8 image."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM needs a 2-D uint8 image")
    rows, cols = img.shape
    return b"P5\n%d %d\n255\n" % (cols, rows) + np.ascontiguousarray(img).tobytes()


def db_image(mag: np.ndarray, range_db: float = PGM_RANGE_DB) -> np.ndarray:
    """Log-magnitude image: ``[max - range_db, max]`` dB maps linearly onto 0..255.

    Row 0 is the highest frequency. Zero magnitudes (and an all-zero input)
    map to 0.
    """
    a = np.asarray(mag, dtype=float)
    img = np.zeros(a.shape, dtype=np.uint8)
    pos = a > 0
    if pos.any():
        db = np.full(a.shape, -np.inf)
        db[pos] = 20.0 * np.log10(a[pos])
        top = db[pos].max()
        scaled = np.clip((db - (top - range_db)) / range_db, 0.0, 1.0)
        img = np.round(255.0 * scaled).astype(np.uint8)
    return img[::-1]


def linear_image(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Values in ``[lo, hi]`` mapped linearly onto 0..255, row 0 = last row of the input."""
    v = np.asarray(values, dtype=float)
    scaled = np.clip((v - lo) / (hi - lo), 0.0, 1.0) if hi > lo else np.zeros(v.shape)
    return np.round(255.0 * scaled).astype(np.uint8)[::-1]


def _write_text(path: str, text: str) -> None:
    atomic_write(path, text.encode())


def _write_json(path: str, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _table_csv(header, rows) -> str:
    lines = [",".join(header) + "\n"]
    for r in rows:
        lines.append(",".join(v if isinstance(v, str) else "%.17g" % v for v in r) + "\n")
    return "".join(lines)


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite values in the result")


def _write_spectrum(prefix: str, tf) -> None:
    mag = np.abs(tf.values)
    _check_finite(tf.values)
    _write_text(prefix + ".mag.csv", format_csv(mag))
    atomic_write(prefix + ".pgm", pgm_bytes(db_image(mag)))


def _plan_echo(plan) -> dict:
    return {
        "window": plan.window.kind.value,
        "support": plan.support,
        "n_frames": plan.n_frames,
        "n_bins": plan.n_bins,
        "length_mode": plan.lengths.mode.value,
        "lengths": np.asarray(plan.lengths.values).tolist(),
        "position_mode": plan.positions.mode.value,
        "positions": {k: np.asarray(v).tolist() for k, v in sorted(plan.positions.params.items())},
        "frame_positions": resolve_positions(plan).tolist(),
    }


def _n_frames(n_samples: int, hop: float, t0: float = 0.0) -> int:
    """Frames ``t0, t0 + hop, ...`` up to the signal length (classical STFT convention)."""
    return 1 + int(np.floor((n_samples - t0) / hop))


# -- spectrogram ---------------------------------------------------------------

def cmd_spectrogram(args) -> int:
    sig = load(args.input, args.format)
    if not args.hop > 0:
        raise UsageError("--hop must be positive")
    n = _n_frames(len(sig), args.hop, args.t0)
    if n < 1:
        raise UsageError("--t0 lies beyond the end of the signal")
    theta = float(args.support) if args.theta is None else args.theta
    plan = make_plan(args.support, theta, PositionField.uniform_hop(args.t0, args.hop), n, args.window)
    tf = forward(plan, sig)
    _check_finite(tf.values)
    S = tf.values
    pairs = np.empty((S.shape[0], 2 * S.shape[1]))
    pairs[:, 0::2], pairs[:, 1::2] = S.real, S.imag
    _write_text(args.out + ".stft.csv", format_csv(pairs))
    _write_spectrum(args.out, tf)
    meta = {
        "input": args.input,
        "format": FileFormat.parse(args.format).value,
        "sample_rate": sig.sample_rate,
        "delta_f": tf.delta_f,
        "theta": theta,
        "hop": args.hop,
        "t0": args.t0,
        "plan": _plan_echo(plan),
    }
    _write_json(args.out + ".meta.json", meta)
    log.info("wrote %s.{stft.csv,mag.csv,meta.json,pgm} (%d x %d)", args.out, *S.shape)
    return EXIT_OK


# -- optimize --------------------------------------------------------------------

_DEFAULT_LENGTH = {
    ScenarioKind.THREE_COMPONENT: 8192,
    ScenarioKind.MULTI_HARMONIC: 8192,
    ScenarioKind.SHOCK_TRAIN: 4096,
    ScenarioKind.VARIABLE_PERIOD_SINE: 4096,
}

_STAGE_FIT = {
    "const": pl.ENTROPY_FIT,
    "time": OptimConfig(lr_theta=5.0, max_iters=150, rel_tol=1e-10),
    "freq": OptimConfig(lr_theta=5.0, max_iters=150, rel_tol=1e-10),
    "tf": pl.TF_FIT,
    "hop": pl.HOP_FIT,
    "fixed-overlap": pl.HOP_FIT,
}


def _optimize_signal(args) -> tuple[Signal, dict]:
    if args.input is not None:
        return load(args.input, args.format), {"input": args.input}
    kind = ScenarioKind.parse(args.scenario)
    length = args.length or _DEFAULT_LENGTH[kind]
    syn = generate(SyntheticScenario(kind, length, seed=args.seed))
    return syn.signal, {"scenario": kind.value, "length": length, "seed": args.seed}


def _check_compat(args) -> None:
    if args.objective == "entropy+nltv" and args.mode != "tf":
        raise UsageError("--objective entropy+nltv requires --mode tf")
    if args.objective == "kurtosis+coverage" and args.mode not in ("hop", "fixed-overlap"):
        raise UsageError("--objective kurtosis+coverage requires --mode hop or fixed-overlap")
    if args.objective == "entropy" and args.lam is not None:
        raise UsageError("--lambda needs a regularized objective (entropy+nltv or kurtosis+coverage)")
    if args.init == "from-const" and args.mode not in ("time", "freq", "tf"):
        raise UsageError("--init from-const applies to --mode time, freq or tf")


def _initial_plan(args, n_samples: int):
    L = args.support
    if args.mode in ("hop", "fixed-overlap"):
        N = args.frames or 32
        theta = args.theta0 if args.theta0 is not None else L / 2
        lengths = LengthField.time_varying(np.full(N, theta))
        hop = n_samples / N
        if args.mode == "hop":
            pf = PositionField.varying_hop(np.r_[hop / 2, np.full(N - 1, hop)])
        else:
            pf = PositionField.fixed_overlap(min(max(hop / theta, 0.05), 0.95), hop / 2)
        return make_plan(L, lengths, pf, N, args.window)
    hop = args.hop if args.hop is not None else L / 8
    N = args.frames or _n_frames(n_samples, hop)
    theta = args.theta0 if args.theta0 is not None else L / 2
    plan = make_plan(L, theta, PositionField.uniform_hop(0.0, hop), N, args.window)
    return plan if args.mode == "const" else pl.warm_start(plan, args.mode)


def _objective(args, n_samples: int):
    if args.objective == "entropy":
        return entropy_objective()
    if args.objective == "entropy+nltv":
        lam = 1e-3 if args.lam is None else args.lam
        return entropy_nltv_objective(ObjectiveConfig(lam=lam))
    lam = pl.HOP_LAMBDA if args.lam is None else args.lam
    return kurtosis_coverage_objective(n_samples, ObjectiveConfig(lam=lam))


def _stage_config(args) -> OptimConfig:
    cfg = _STAGE_FIT[args.mode]
    upd = {}
    if args.lr is not None:
        upd["lr_theta"] = args.lr
    if args.lr_t is not None:
        upd["lr_t"] = args.lr_t
    if args.lr_decay is not None:
        upd["lr_decay"] = args.lr_decay
    if args.max_iters is not None:
        upd["max_iters"] = args.max_iters
    if args.theta_min is not None:
        upd["theta_bounds"] = (args.theta_min, None)
    if args.algorithm is not None:
        upd["algorithm"] = args.algorithm
    return replace(cfg, **upd)


def cmd_optimize(args) -> int:
    if args.objective is None:
        args.objective = {"hop": "kurtosis+coverage", "fixed-overlap": "kurtosis+coverage",
                          "tf": "entropy+nltv"}.get(args.mode, "entropy")
    if args.init is None:
        args.init = "from-const" if args.mode in ("time", "freq", "tf") else "value"
    _check_compat(args)
    sig, source = _optimize_signal(args)
    n = len(sig)
    plan = _initial_plan(args, n)
    objective = _objective(args, n)
    traces = []
    if args.init == "from-const":
        const = replace(plan, lengths=LengthField.constant(float(np.mean(plan.lengths.values))))
        r0 = fit(const, sig, entropy_objective(), pl.ENTROPY_FIT)
        traces.append(r0)
        plan = pl.warm_start(r0.final_plan, args.mode)
        log.info("constant stage: theta = %.4f after %d iterations",
                 float(r0.final_plan.lengths.values), r0.iterations_used)
    r = fit(plan, sig, objective, _stage_config(args))
    traces.append(r)
    final = r.final_plan
    tf = forward(final, sig)
    _check_finite(tf.values, r.loss_trace)

    rows, it = [], 0
    for tr in traces:
        for loss, g in zip(tr.loss_trace, tr.grad_norm_trace):
            rows.append((float(it), loss, g))
            it += 1
    _write_text(args.out + ".trace.csv", _table_csv(["iter", "loss", "grad_norm"], rows))
    params = {
        "mode": args.mode,
        "objective": args.objective,
        "init": args.init,
        "source": source,
        "final_loss": float(r.loss_trace[-1]),
        "iterations": int(sum(t.iterations_used for t in traces)),
        "converged": bool(r.converged),
        "plan": _plan_echo(final),
    }
    _write_json(args.out + ".params.json", params)
    _write_spectrum(args.out, tf)
    if final.lengths.mode is LengthMode.TIME_FREQ:
        th = final.lengths.values
        _write_text(args.out + ".thetamap.csv", format_csv(th))
        atomic_write(args.out + ".thetamap.pgm", pgm_bytes(linear_image(th, THETA_MIN, final.support)))
    log.info("final loss %.8g after %d iterations", params["final_loss"], params["iterations"])
    return EXIT_OK


# -- taskfit ----------------------------------------------------------------------

def _parse_sweep(text: str):
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"--sweep expects lo:hi:step, got {text!r}") from None
    return lo, hi, step


def _task_track(args) -> int:
    sweep = _parse_sweep(args.sweep or "20:512:10")
    thetas = []
    out = pl.tracking_task(size=args.dataset_size or 8, seed=args.seed, sweep=sweep,
                           theta0=args.theta0 if args.theta0 is not None else 100.0,
                           callback=lambda it, p, ex, loss: thetas.append((it, float(p.lengths.values), loss)))
    _write_text(args.out + ".sweep.csv", _table_csv(["theta", "loss"], out.sweep.tolist()))
    _write_text(args.out + ".trace.csv", _table_csv(["iter", "theta", "loss"], thetas))
    summary = {
        "task": "track",
        "dataset_size": args.dataset_size or 8,
        "seed": args.seed,
        "sweep": list(sweep),
        "gd_theta": out.theta,
        "gd_loss": float(out.result.loss_trace[-1]),
        "sweep_argmin": out.sweep_argmin,
        "sweep_min": float(out.sweep[:, 1].min()),
        "iterations": out.result.iterations_used,
    }
    _write_json(args.out + ".optima.json", summary)
    log.info("gradient-descent theta %.3f, sweep argmin %.1f", out.theta, out.sweep_argmin)
    return EXIT_OK


def _task_classify(args) -> int:
    try:
        grid = tuple(float(v) for v in args.grid.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--grid expects comma-separated lengths, got {args.grid!r}") from None
    out = pl.classification_task(size=args.dataset_size or 200, seed=args.seed,
                                 theta0=args.theta0 if args.theta0 is not None else 32.0,
                                 grid=grid, record=True)
    cols = ["epoch", "theta"] + [f"{s}_{m}" for s in ("train", "val", "test") for m in ("loss", "acc")]
    hist = [[float(h[c]) for c in cols] for h in out.joint.history]
    _write_text(args.out + ".history.csv", _table_csv(cols, hist))
    g_rows = [(th, run.test_loss, run.test_acc) for th, run in sorted(out.grid.items())]
    _write_text(args.out + ".grid.csv", _table_csv(["theta", "test_loss", "test_acc"], g_rows))
    summary = {
        "task": "classify",
        "dataset_size": args.dataset_size or 200,
        "seed": args.seed,
        "joint_theta": out.joint.theta,
        "joint_test_loss": out.joint.test_loss,
        "joint_test_acc": out.joint.test_acc,
        "grid_best_test_loss": out.best_grid_loss if out.grid else None,
    }
    _write_json(args.out + ".summary.json", summary)
    log.info("joint theta %.3f, test loss %.5f", out.joint.theta, out.joint.test_loss)
    return EXIT_OK


def cmd_taskfit(args) -> int:
    return _task_track(args) if args.task == "track" else _task_classify(args)


# -- gradcheck / bench ---------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    modes = verify.LENGTH_MODES if args.all else tuple(args.mode)
    kinds = ("hann", "gauss") if args.window is None else (args.window,)
    rows = verify.gradcheck_suite(args.seed, kinds=kinds, length_modes=modes)
    text = verify.gradcheck_csv(rows)
    if args.out:
        _write_text(args.out + ".gradcheck.csv", text)
    else:
        sys.stdout.write(text)
    worst = max((r["max_rel_err"] for r in rows), default=0.0)
    ok = worst <= args.tol
    print(f"max relative error {worst:.3e} over {len(rows)} checks (tol {args.tol:g}): "
          f"{'PASS' if ok else 'FAIL'}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_CHECK


_BANDS = {"time": (1.6, 3.0), "tf": (3.0, 5.0)}


def cmd_bench(args) -> int:
    try:
        supports = [int(v) for v in args.sizes.split(",")]
    except ValueError:
        raise UsageError(f"--sizes expects comma-separated supports, got {args.sizes!r}") from None
    if supports != sorted(supports) or any(L < 4 or L % 2 for L in supports):
        raise UsageError("--sizes must be ascending even supports >= 4")
    rows = []
    for mode in args.modes.split(","):
        if mode not in verify.LENGTH_MODES:
            raise UsageError(f"unknown mode {mode!r} in --modes")
        rows += verify.complexity_probe(mode, [(args.frames, L) for L in supports], args.repeats)
    text = verify.probe_csv(rows)
    if args.out:
        _write_text(args.out + ".bench.csv", text)
    else:
        sys.stdout.write(text)
    if not args.check:
        return EXIT_OK
    ok = True
    for mode in {r["mode"] for r in rows}:
        sub = [r for r in rows if r["mode"] == mode]
        ratios = verify.doubling_ratios(sub)
        lo, hi = _BANDS.get(mode, (0.0, np.inf))
        if any(not lo <= q <= hi for q in ratios) or any(r["backward_s"] > 3 * r["forward_s"] for r in sub):
            ok = False
            print(f"{mode}: doubling ratios {np.round(ratios, 2).tolist()} outside [{lo}, {hi}] "
                  "or backward > 3x forward", file=sys.stderr)
    return EXIT_OK if ok else EXIT_CHECK


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dstft", description="Differentiable STFT toolkit.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sub = p.add_subparsers(dest="command", required=True)
    formats = [f.value for f in FileFormat] + ["wav"]

    s = sub.add_parser("spectrogram", help="transform a signal file")
    s.add_argument("--input", required=True)
    s.add_argument("--format", choices=formats, default="csv")
    s.add_argument("--window", choices=["hann", "gauss"], default="hann")
    s.add_argument("--support", type=int, default=256, help="base support L (even)")
    s.add_argument("--theta", type=float, help="window length (default: L)")
    s.add_argument("--hop", type=float, default=64.0)
    s.add_argument("--t0", type=float, default=0.0, help="first frame centre")
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_spectrogram)

    o = sub.add_parser("optimize", help="fit lengths/positions to an unsupervised loss")
    o.add_argument("--mode", choices=list(_STAGE_FIT), default="const")
    o.add_argument("--objective", choices=["entropy", "entropy+nltv", "kurtosis+coverage"])
    o.add_argument("--lambda", dest="lam", type=float, help="regularization weight")
    o.add_argument("--lr", type=float, help="window-length learning rate")
    o.add_argument("--lr-t", type=float, help="position learning rate")
    o.add_argument("--lr-decay", type=float)
    o.add_argument("--algorithm", choices=["adam", "gd"])
    o.add_argument("--max-iters", type=int)
    o.add_argument("--init", choices=["value", "from-const"])
    o.add_argument("--theta0", type=float, help="initial window length (default L/2)")
    o.add_argument("--theta-min", type=float, help="lower bound on window lengths")
    src = o.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", choices=[k.value for k in ScenarioKind])
    src.add_argument("--input")
    o.add_argument("--format", choices=formats, default="csv")
    o.add_argument("--length", type=int, help="scenario length in samples")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--window", choices=["hann", "gauss"], default="hann")
    o.add_argument("--support", type=int, help="base support L (default 1024; 128 for hop modes)")
    o.add_argument("--hop", type=float, help="hop for uniform frames (default L/8)")
    o.add_argument("--frames", type=int, help="number of frames")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_optimize)

    t = sub.add_parser("taskfit", help="task-driven window-length fits")
    t.add_argument("--task", choices=["track", "classify"], required=True)
    t.add_argument("--dataset-size", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--sweep", help="lo:hi:step for the tracking sweep (default 20:512:10)")
    t.add_argument("--grid", default=",".join(f"{g:g}" for g in pl.CLASSIFY_GRID),
                   help="fixed lengths compared against the joint fit (classify)")
    t.add_argument("--theta0", type=float)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_taskfit)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    which = g.add_mutually_exclusive_group(required=True)
    which.add_argument("--all", action="store_true")
    which.add_argument("--mode", action="append", choices=list(verify.LENGTH_MODES))
    g.add_argument("--window", choices=["hann", "gauss"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-5)
    g.add_argument("--out", help="write PREFIX.gradcheck.csv instead of stdout")
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="forward/backward timing")
    b.add_argument("--sizes", default="256,512,1024", help="ascending supports L")
    b.add_argument("--frames", type=int, default=32)
    b.add_argument("--modes", default="time,tf")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--check", action="store_true", help="exit 1 if timing ratios leave their bands")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad flags
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if getattr(args, "support", None) is None and args.command == "optimize":
        args.support = 128 if args.mode in ("hop", "fixed-overlap") else 1024
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"dstft: diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"dstft: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParseError as e:
        print(f"dstft: cannot parse input: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"dstft: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"dstft: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
