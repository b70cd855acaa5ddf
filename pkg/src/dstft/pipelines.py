"""Ready-made experiment pipelines with their tuned settings.

Each pipeline builds a scenario, a starting plan and an optimizer
configuration, runs the fit and returns plain results. The command-line tool,
the demos and the acceptance tests all go through these functions so that
they exercise exactly the same settings.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .objectives import (
    ObjectiveConfig,
    classification_objective,
    coverage,
    entropy_nltv_objective,
    entropy_objective,
    kurtosis_coverage_objective,
    predict,
    shannon_entropy,
    total_variation,
    tracking_objective,
)
from .optimize import OptimConfig, OptimResult, as_constant, evaluate, fit, sweep_theta
from .signals import (
    ScenarioKind,
    Synthetic,
    SyntheticScenario,
    generate,
    tracking_dataset,
    two_class_dataset,
)
from .tracking import FrequencyTrack, ridge_track, track_mse
from .transform import (
    DstftPlan,
    LengthField,
    PositionField,
    Signal,
    forward,
    make_plan,
    resolve_positions,
)

# -- entropy: constant, then time-frequency varying ---------------------------

#: constant-length entropy fit; the loss is very flat in theta, hence the
#: large step with a decay to settle
ENTROPY_FIT = OptimConfig(lr_theta=20.0, lr_decay=0.99, max_iters=300, rel_tol=1e-8)
#: warm-started time-frequency refinement
TF_FIT = OptimConfig(lr_theta=5.0, max_iters=20, rel_tol=1e-10)


def entropy_scenario(seed: int = 0, length: int = 8192) -> Synthetic:
    return generate(SyntheticScenario(ScenarioKind.THREE_COMPONENT, length, seed=seed))


def entropy_plan(theta: float = 500.0, support: int = 1024, hop: float = 128.0,
                 n_frames: int = 65, kind="hann") -> DstftPlan:
    return make_plan(support, theta, PositionField.uniform_hop(0.0, hop), n_frames, kind)


def fit_constant_entropy(signal: Signal, plan: DstftPlan, theta0: float,
                         cfg: OptimConfig = ENTROPY_FIT) -> OptimResult:
    return fit(as_constant(plan, theta0), signal, entropy_objective(), cfg)


def warm_start(plan: DstftPlan, mode: str) -> DstftPlan:
    """Broadcast a constant-length plan to a ``time``/``freq``/``tf`` length field."""
    theta = float(np.mean(plan.lengths.values))
    M, N = plan.shape
    field_ = {
        "const": lambda: LengthField.constant(theta),
        "time": lambda: LengthField.time_varying(np.full(N, theta)),
        "freq": lambda: LengthField.freq_varying(np.full(M, theta)),
        "tf": lambda: LengthField.time_freq(np.full((M, N), theta)),
    }
    try:
        return replace(plan, lengths=field_[mode]())
    except KeyError:
        raise ValueError(f"unknown length mode {mode!r}") from None


@dataclass
class TfEntropyOutcome:
    result: OptimResult
    entropy: float
    total_variation: float


def fit_tf_entropy(signal: Signal, const_plan: DstftPlan, lam: float,
                   cfg: OptimConfig = TF_FIT) -> TfEntropyOutcome:
    """Warm-started time-frequency fit of entropy plus ``lam`` times the NLTV penalty."""
    obj = entropy_nltv_objective(ObjectiveConfig(lam=lam))
    r = fit(warm_start(const_plan, "tf"), signal, obj, cfg)
    H = shannon_entropy(forward(r.final_plan, signal)).value
    return TfEntropyOutcome(r, H, total_variation(r.final_plan.lengths.values))


# -- hop / kurtosis -----------------------------------------------------------

HOP_FIT = OptimConfig(lr_theta=0.1, lr_t=2.0, max_iters=300, rel_tol=1e-9,
                      train_positions=True, train_lengths=True)
HOP_LAMBDA = 0.3


def shock_scenario(seed: int = 0, length: int = 4096) -> Synthetic:
    return generate(SyntheticScenario(ScenarioKind.SHOCK_TRAIN, length, seed=seed))


def shock_plan(length: int = 4096, support: int = 128, n_frames: int = 32,
               theta: float = 64.0, kind="hann") -> DstftPlan:
    """Evenly spaced frames (first half a hop in) with trainable per-frame hops."""
    hop = length / n_frames
    hops = np.r_[hop / 2, np.full(n_frames - 1, hop)]
    return make_plan(support, LengthField.time_varying(np.full(n_frames, theta)),
                     PositionField.varying_hop(hops), n_frames, kind)


def mean_center_distance(centers, positions) -> float:
    """Mean over shocks of the distance to the nearest frame centre."""
    c = np.asarray(centers, dtype=float)[:, None]
    t = np.asarray(positions, dtype=float)[None, :]
    return float(np.mean(np.min(np.abs(c - t), axis=1)))


@dataclass
class HopOutcome:
    result: OptimResult
    distance: tuple
    coverage: tuple


def fit_hops(syn: Synthetic, plan: DstftPlan, lam: float = HOP_LAMBDA,
             cfg: OptimConfig = HOP_FIT) -> HopOutcome:
    n = syn.signal.samples.size
    r = fit(plan, syn.signal, kurtosis_coverage_objective(n, ObjectiveConfig(lam=lam)), cfg)
    centers = syn.meta["centers"]

    def cov(p):
        return coverage(resolve_positions(p), p.frame_lengths(), n).value

    return HopOutcome(
        r,
        (mean_center_distance(centers, resolve_positions(plan)),
         mean_center_distance(centers, resolve_positions(r.final_plan))),
        (cov(plan), cov(r.final_plan)),
    )


# -- harmonic ridge tracking --------------------------------------------------

HARMONIC_TV_FIT = OptimConfig(lr_theta=5.0, max_iters=150, rel_tol=1e-10, theta_bounds=(64.0, None))
HARMONIC = 10


def harmonic_band(f0: np.ndarray, k: int = HARMONIC):
    """Search band for harmonic ``k``: half-way to the neighbouring harmonics' ranges."""
    lo, hi = float(np.min(f0)), float(np.max(f0))
    return ((k - 1) * hi + k * lo) / 2, (k * hi + (k + 1) * lo) / 2


@dataclass
class HarmonicOutcome:
    const_result: OptimResult
    tv_result: OptimResult
    mse_const: float
    mse_tv: float
    track_const: FrequencyTrack
    track_tv: FrequencyTrack


def harmonic_comparison(seed: int, length: int = 8192, support: int = 1024, hop: float = 128.0,
                        max_jump_bins: int = 3) -> HarmonicOutcome:
    """Ridge-track harmonic 10 with entropy-optimized constant and time-varying lengths.

    Both tracks are divided by 10 and compared with the fundamental.
    """
    syn = generate(SyntheticScenario(ScenarioKind.MULTI_HARMONIC, length, seed=seed))
    N = 1 + int(length // hop)
    plan = make_plan(support, 300.0, PositionField.uniform_hop(0.0, hop), N, "hann")
    truth = syn.track_at(resolve_positions(plan))
    band = harmonic_band(syn.inst_freq)
    obj = entropy_objective()
    rc = fit(plan, syn.signal, obj, ENTROPY_FIT)
    rt = fit(warm_start(rc.final_plan, "time"), syn.signal, obj, HARMONIC_TV_FIT)
    tracks = [ridge_track(forward(r.final_plan, syn.signal), band, max_jump_bins).scaled(1 / HARMONIC)
              for r in (rc, rt)]
    return HarmonicOutcome(rc, rt, track_mse(tracks[0], truth), track_mse(tracks[1], truth), *tracks)


# -- task-driven: tracking ----------------------------------------------------

TRACK_FIT = OptimConfig(lr_theta=10.0, lr_decay=0.99, max_iters=300, rel_tol=1e-8)


@dataclass
class TrackTaskOutcome:
    sweep: np.ndarray
    result: OptimResult
    theta: float
    sweep_argmin: float
    evaluate: object = field(repr=False)


def tracking_task(size: int = 8, length: int = 4096, support: int = 512, hop: float = 64.0,
                  seed: int = 0, snr_db: float = 40.0, sweep=(20.0, 512.0, 10.0),
                  theta0: float = 100.0, cfg: OptimConfig = TRACK_FIT, callback=None) -> TrackTaskOutcome:
    """Fit one global window length minimizing the frequency-tracking MSE, plus a sweep."""
    ds = tracking_dataset(size, length, seed=seed, snr_db=snr_db)
    N = 1 + int(length // hop)
    plan = make_plan(support, theta0, PositionField.uniform_hop(0.0, hop), N, "hann")
    t = resolve_positions(plan)
    idx = np.arange(length)
    truths = [np.interp(t, idx, tr) for tr in ds.targets]
    obj = tracking_objective(truths)
    lo, hi, step = sweep
    curve = sweep_theta(plan, ds.signals, obj, (lo, hi), step)
    r = fit(plan, ds.signals, obj, cfg, callback=callback)

    def loss_at(theta):
        p = as_constant(plan, theta)
        return evaluate(p, ds.signals, obj)[0]

    return TrackTaskOutcome(curve, r, float(r.final_plan.lengths.values),
                            float(curve[np.argmin(curve[:, 1]), 0]), loss_at)


# -- task-driven: classification ----------------------------------------------

CLASSIFY_FIT = OptimConfig(lr_theta=1.0, lr_extra=1e-2, max_iters=100, rel_tol=1e-9)
CLASSIFY_GRID = (8.0, 16.0, 32.0, 48.0, 64.0)


@dataclass
class ClassifyRun:
    theta: float
    result: OptimResult
    history: list  # per epoch: dict(epoch, theta, {split}_loss, {split}_acc)
    test_loss: float
    test_acc: float


def _split_metrics(plan, extra, ds, objective):
    loss = evaluate(plan, ds.signals, objective, extra)[0]
    hits = [int(np.argmax(predict(forward(plan, s), extra["weights"], extra["bias"])) == y)
            for s, y in zip(ds.signals, ds.targets)]
    return loss, float(np.mean(hits))


def classify_run(data: dict, theta0: float, train_lengths: bool, support: int = 64,
                 hop: float = 32.0, cfg: OptimConfig = CLASSIFY_FIT, record: bool = False) -> ClassifyRun:
    """Train the linear head (and, if asked, the window length) from zero weights."""
    length = data["train"].signals[0].samples.size
    N = 1 + int(length // hop)
    M = support // 2 + 1
    plan = make_plan(support, theta0, PositionField.uniform_hop(0.0, hop), N, "hann")
    extra = {"weights": np.zeros((2, M * N)), "bias": np.zeros(2)}
    objs = {k: classification_objective(v.targets) for k, v in data.items()}
    history: list = []

    def cb(it, p, ex, loss):
        row = {"epoch": it, "theta": float(np.mean(p.lengths.values))}
        for split, ds in data.items():
            row[f"{split}_loss"], row[f"{split}_acc"] = _split_metrics(p, ex, ds, objs[split])
        history.append(row)

    r = fit(plan, data["train"].signals, objs["train"], replace(cfg, train_lengths=train_lengths),
            extra=extra, callback=cb if record else None)
    test_loss, test_acc = _split_metrics(r.final_plan, r.extra["final"], data["test"], objs["test"])
    return ClassifyRun(float(np.mean(r.final_plan.lengths.values)), r, history, test_loss, test_acc)


@dataclass
class ClassifyOutcome:
    joint: ClassifyRun
    grid: dict  # theta -> ClassifyRun

    @property
    def best_grid_loss(self) -> float:
        return min(g.test_loss for g in self.grid.values())


def classification_data(size: int = 200, length: int = 512, seed: int = 0, snr_db: float = 10.0) -> dict:
    ds = two_class_dataset(size, length, seed=seed, snr_db=snr_db).assign_splits((0.8, 0.1, 0.1), seed=seed)
    return {s: ds.subset(s) for s in ("train", "val", "test")}


def classification_task(size: int = 200, seed: int = 0, theta0: float = 32.0, grid=CLASSIFY_GRID,
                        record: bool = False) -> ClassifyOutcome:
    """Joint window-length + head training against a grid of fixed lengths trained the same way."""
    data = classification_data(size, seed=seed)
    joint = classify_run(data, theta0, True, record=record)
    fixed = {float(th): classify_run(data, th, False) for th in grid}
    return ClassifyOutcome(joint, fixed)
