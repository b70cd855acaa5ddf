"""Gradient-based fitting of transform parameters and grid sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .grad import ParamGradients
from .objectives import EvalResult, to_param_gradients
from .transform import DstftPlan, LengthField, PositionMode, Signal, forward
from .window import THETA_MIN

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """The loss or its gradient became non-finite during fitting."""


@dataclass(frozen=True)
class OptimConfig:
    """Optimizer settings.

    ``algorithm`` is ``"adam"`` or ``"gd"``. Fitting stops once the loss has
    changed by at most ``rel_tol`` per iteration (relative), averaged over the
    last ``patience`` iterations. Window lengths, position
    parameters and auxiliary arrays (``extra``) each have their own learning
    rate, multiplied by ``lr_decay`` after every iteration. Only the groups switched on by ``train_lengths`` /
    ``train_positions`` move; the overlap ratio of fixed-overlap positions is
    never trained.
    """

    algorithm: str = "adam"
    lr_theta: float = 1.0
    lr_t: float = 0.1
    lr_extra: float = 1e-2
    lr_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_iters: int = 300
    rel_tol: float = 1e-6
    patience: int = 1
    theta_bounds: tuple = (THETA_MIN, None)
    position_bounds: tuple = (-np.inf, np.inf)
    hop_bounds: tuple = (0.0, np.inf)
    train_lengths: bool = True
    train_positions: bool = False

    def __post_init__(self):
        if self.algorithm not in ("adam", "gd"):
            raise ValueError("algorithm must be 'adam' or 'gd'")
        if min(self.lr_theta, self.lr_t, self.lr_extra) <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.max_iters < 1 or self.patience < 1:
            raise ValueError("max_iters and patience must be positive")
        lo, hi = self.theta_bounds
        if lo < THETA_MIN or (hi is not None and hi < lo):
            raise ValueError("theta bounds must satisfy THETA_MIN <= lo <= hi")
        if self.position_bounds[1] < self.position_bounds[0]:
            raise ValueError("position bounds must be ordered")


@dataclass
class OptimResult:
    final_plan: DstftPlan
    loss_trace: np.ndarray
    grad_norm_trace: np.ndarray
    iterations_used: int
    converged: bool
    best_plan: DstftPlan
    best_loss: float
    extra: dict = field(default_factory=dict)
    n_forward: int = 0
    n_backward: int = 0


class _Adam:
    def __init__(self, cfg: OptimConfig):
        self.cfg = cfg
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, key, p, g, lr):
        c = self.cfg
        if c.algorithm == "gd":
            return p - lr * g
        m = self.m.get(key, np.zeros_like(g))
        v = self.v.get(key, np.zeros_like(g))
        m = c.beta1 * m + (1 - c.beta1) * g
        v = c.beta2 * v + (1 - c.beta2) * g * g
        self.m[key], self.v[key] = m, v
        mhat = m / (1 - c.beta1**self.t)
        vhat = v / (1 - c.beta2**self.t)
        return p - lr * mhat / (np.sqrt(vhat) + c.adam_eps)


def evaluate(plan: DstftPlan, signals, objective, extra=None):
    """Mean objective value and mean parameter gradients over ``signals``."""
    total = 0.0
    grads = None
    d_extra: dict = {}
    J = len(signals)
    for j, sig in enumerate(signals):
        tf = forward(plan, sig)
        res: EvalResult = objective(tf, plan, j) if extra is None else objective(tf, plan, j, extra)
        g = to_param_gradients(plan, sig, res)
        total += res.value / J
        grads = g.scaled(1 / J) if grads is None else grads + g.scaled(1 / J)
        for k, v in res.d_extra.items():
            d_extra[k] = d_extra.get(k, 0) + np.asarray(v) / J
    return total, grads, d_extra


def _project(plan: DstftPlan, cfg: OptimConfig) -> DstftPlan:
    lo, hi = cfg.theta_bounds
    hi = plan.support if hi is None else min(hi, plan.support)
    plan = plan.with_lengths(np.clip(plan.lengths.values, lo, hi))
    pos = plan.positions
    upd = {}
    for key, v in pos.params.items():
        if key in ("t", "t0"):
            upd[key] = np.clip(v, *cfg.position_bounds)
        elif key in ("hop", "hops"):
            upd[key] = np.clip(v, *cfg.hop_bounds)
    return plan.with_positions(**upd) if upd else plan


def _grad_norm(grads: ParamGradients, d_extra: dict, cfg: OptimConfig, plan: DstftPlan) -> float:
    sq = 0.0
    if cfg.train_lengths:
        sq += float(np.sum(np.square(grads.d_lengths)))
    if cfg.train_positions:
        sq += sum(float(np.sum(np.square(grads.d_positions[k]))) for k in _trainable_position_keys(plan))
    sq += sum(float(np.sum(np.square(v))) for v in d_extra.values())
    return float(np.sqrt(sq))


def _trainable_position_keys(plan: DstftPlan):
    return [k for k in plan.positions.params if k != "alpha"]


def fit(plan0: DstftPlan, signals, objective, cfg: OptimConfig = OptimConfig(), extra=None,
        callback=None) -> OptimResult:
    """Minimize ``objective`` averaged over ``signals`` by (projected) gradient descent.

    Parameters
    ----------
    plan0 : DstftPlan
        Starting parameters.
    signals : Signal or sequence of Signal
        One signal, or a dataset (full-batch mean).
    objective : callable
        ``objective(tf, plan, j) -> EvalResult`` for signal ``j``; when
        ``extra`` is given it is called as ``objective(tf, plan, j, extra)``
        and must fill ``d_extra`` with the same keys.
    cfg : OptimConfig
    extra : dict of ndarray, optional
        Auxiliary trainable arrays updated alongside the plan.
    callback : callable, optional
        Called as ``callback(it, plan, extra, loss)`` after every evaluation.
    """
    if isinstance(signals, Signal) or not isinstance(signals, (list, tuple)):
        signals = [signals]
    signals = [s if isinstance(s, Signal) else Signal(s) for s in signals]
    extra = None if extra is None else {k: np.array(v, dtype=float) for k, v in extra.items()}

    plan = _project(plan0, cfg)
    opt = _Adam(cfg)
    losses, norms = [], []
    best_plan, best_loss, best_extra = plan, np.inf, extra
    converged = False
    n_fwd = 0
    for it in range(cfg.max_iters):
        value, grads, d_extra = evaluate(plan, signals, objective, extra)
        n_fwd += len(signals)
        gnorm = _grad_norm(grads, d_extra, cfg, plan)
        if not (np.isfinite(value) and np.isfinite(gnorm)):
            raise DivergenceError(f"non-finite loss/gradient at iteration {it}: loss={value}")
        losses.append(value)
        norms.append(gnorm)
        if callback is not None:
            callback(it, plan, extra, value)
        if value < best_loss:
            best_plan, best_loss = plan, value
            best_extra = None if extra is None else {k: v.copy() for k, v in extra.items()}
        k = cfg.patience
        if it >= k and abs(losses[-1] - losses[-1 - k]) <= cfg.rel_tol * k * abs(losses[-1 - k]):
            converged = True
            break
        if it == cfg.max_iters - 1:
            break
        opt.t += 1
        decay = cfg.lr_decay**it
        new_len = plan.lengths.values
        if cfg.train_lengths:
            new_len = opt.step("lengths", new_len, grads.d_lengths, cfg.lr_theta * decay)
        upd = {}
        if cfg.train_positions:
            for k in _trainable_position_keys(plan):
                upd[k] = opt.step(k, plan.positions.params[k], grads.d_positions[k], cfg.lr_t * decay)
        plan = plan.with_lengths(np.clip(new_len, THETA_MIN, plan.support))
        if upd:
            plan = plan.with_positions(**upd)
        plan = _project(plan, cfg)
        if extra is not None:
            extra = {k: opt.step("extra:" + k, v, d_extra[k], cfg.lr_extra * decay) for k, v in extra.items()}
        log.debug("iter %d loss %.6g |g| %.3g", it, value, gnorm)

    n = len(losses)
    return OptimResult(
        final_plan=plan,
        loss_trace=np.array(losses),
        grad_norm_trace=np.array(norms),
        iterations_used=n,
        converged=converged,
        best_plan=best_plan,
        best_loss=float(best_loss),
        extra={} if extra is None else {"final": extra, "best": best_extra},
        n_forward=n_fwd,
        n_backward=n_fwd,
    )


def grid(lo: float, hi: float, step: float) -> np.ndarray:
    """``lo, lo+step, ...`` up to and including ``hi`` (within rounding)."""
    if not step > 0 or hi < lo:
        raise ValueError("empty sweep range")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def sweep_theta(plan: DstftPlan, signals, objective, theta_range, step: float) -> np.ndarray:
    """Objective over a grid of constant window lengths.

    ``plan`` supplies the window, positions and frame count; its lengths are
    replaced by each grid value. Returns an ``(K, 2)`` array of ``(theta, value)``.
    """
    lo, hi = theta_range
    if lo < THETA_MIN or hi > plan.support:
        raise ValueError(f"sweep range must lie within [{THETA_MIN}, {plan.support}]")
    if isinstance(signals, Signal) or not isinstance(signals, (list, tuple)):
        signals = [signals]
    thetas = grid(lo, hi, step)
    out = np.empty((thetas.size, 2))
    for i, th in enumerate(thetas):
        p = as_constant(plan, th)
        value = 0.0
        for j, sig in enumerate(signals):
            value += objective(forward(p, sig), p, j).value / len(signals)
        out[i] = th, value
    return out


def as_constant(plan: DstftPlan, theta: float) -> DstftPlan:
    """Same plan with a constant window length ``theta``."""
    if plan.positions.mode is PositionMode.FIXED_OVERLAP:
        raise ValueError("fixed-overlap plans need per-frame lengths")
    return replace(plan, lengths=LengthField.constant(theta))


def local_minima(values) -> np.ndarray:
    """Indices of strict interior local minima of a 1-D curve."""
    v = np.asarray(values)
    return np.flatnonzero((v[1:-1] < v[:-2]) & (v[1:-1] < v[2:])) + 1
