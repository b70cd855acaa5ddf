"""Analytic backpropagation through the differentiable STFT.

Cotangent convention: for a real loss ``l`` of the complex transform ``S``,
``u = dl/dRe(S) + 1j * dl/dIm(S)`` and ``dl/dp = sum Re(conj(u) * dS/dp)``.

The derivative of ``S`` with respect to a window length or a frame position
is itself a transform computed with the differentiated taper
(``d_theta w`` or ``-d_x w``), restricted to one cell or one column. The
gradient is therefore assembled in two steps: per-cell/per-frame sensitivities
``(D_theta, d_t)`` from two derivative transforms, then a contraction onto the
parameter layout of the plan.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transform import (
    DstftPlan,
    PositionMode,
    Signal,
    resolve_positions,
    transform_with,
)
from .window import Which


@dataclass
class ParamGradients:
    """Gradients mirroring a plan's parameters.

    ``d_lengths`` has the shape of ``plan.lengths.values``; ``d_positions``
    has the keys of ``plan.positions.params``.
    """

    d_lengths: np.ndarray
    d_positions: dict = field(default_factory=dict)

    def __add__(self, other: "ParamGradients") -> "ParamGradients":
        return ParamGradients(
            self.d_lengths + other.d_lengths,
            {k: v + other.d_positions[k] for k, v in self.d_positions.items()},
        )

    def scaled(self, c: float) -> "ParamGradients":
        return ParamGradients(c * self.d_lengths, {k: c * v for k, v in self.d_positions.items()})

    def norm(self) -> float:
        sq = float(np.sum(np.square(self.d_lengths)))
        sq += sum(float(np.sum(np.square(v))) for v in self.d_positions.values())
        return float(np.sqrt(sq))


def _check_cotangent(plan: DstftPlan, cotangent) -> np.ndarray:
    u = np.asarray(cotangent)
    if u.shape != plan.shape:
        raise ValueError(f"cotangent shape {u.shape} does not match plan {plan.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("cotangent contains non-finite entries")
    return u


def frame_sensitivities(plan: DstftPlan, signal: Signal, cotangent):
    """Per-cell length sensitivity ``D_theta`` (M, N) and per-frame ``d_t`` (N,).

    ``D_theta[m, n]`` is the derivative of the loss with respect to the length
    used at cell ``(m, n)``; ``d_t[n]`` with respect to the resolved centre
    of frame ``n``.
    """
    u = _check_cotangent(plan, cotangent)
    if not isinstance(signal, Signal):
        signal = Signal(signal)
    t = resolve_positions(plan)
    s_dtheta, s_dx = transform_with(plan, signal.samples, t, (Which.DTHETA, Which.DX))
    d_theta = np.real(np.conj(u) * s_dtheta)
    d_t = -np.real(np.conj(u) * s_dx).sum(axis=0)
    return d_theta, d_t


def contract(plan: DstftPlan, d_theta_full=None, d_t=None) -> ParamGradients:
    """Map cell/frame sensitivities onto the plan's parameters (chain rule)."""
    M, N = plan.shape
    if d_theta_full is None:
        d_theta_full = np.zeros((M, N))
    if d_t is None:
        d_t = np.zeros(N)
    d_theta_full = np.asarray(d_theta_full, dtype=float)
    d_t = np.asarray(d_t, dtype=float)
    d_len = plan.lengths.reduce(d_theta_full)

    pos = plan.positions
    if pos.mode is PositionMode.EXPLICIT:
        d_pos = {"t": d_t.copy()}
    elif pos.mode is PositionMode.UNIFORM_HOP:
        d_pos = {"t0": np.float64(d_t.sum()), "hop": np.float64(np.arange(N) @ d_t)}
    elif pos.mode is PositionMode.VARYING_HOP:
        # t_n' depends on hops_n for every n <= n'
        d_pos = {"hops": np.cumsum(d_t[::-1])[::-1].copy()}
    else:
        alpha = float(pos.params["alpha"])
        # t_n = t0 + alpha * sum_{i<n} theta_i
        tail = np.cumsum(d_t[::-1])[::-1]
        downstream = np.append(tail[1:], 0.0)
        d_len = d_len + alpha * downstream
        theta = plan.lengths.values
        prefix = np.concatenate(([0.0], np.cumsum(theta)[:-1]))
        d_pos = {"t0": np.float64(d_t.sum()), "alpha": np.float64(prefix @ d_t)}
    return ParamGradients(np.asarray(d_len, dtype=float), d_pos)


def backward(plan: DstftPlan, signal: Signal, cotangent) -> ParamGradients:
    """Gradient of a loss with respect to every parameter of ``plan``.

    Parameters
    ----------
    plan : DstftPlan
    signal : Signal
    cotangent : complex ndarray, shape (M, N)
        ``dl/dRe(S) + 1j * dl/dIm(S)`` at ``S = forward(plan, signal)``.
    """
    d_theta, d_t = frame_sensitivities(plan, signal, cotangent)
    return contract(plan, d_theta, d_t)


@dataclass
class GroupReport:
    max_rel_err: float
    mean_rel_err: float
    n_checked: int
    degenerate: bool = False


def relative_error(analytic, numeric, floor: float = 0.0) -> np.ndarray:
    """Elementwise ``|a - f| / max(|a|, |f|, floor)``; zero where both vanish."""
    a = np.asarray(analytic)
    f = np.asarray(numeric)
    if not (np.iscomplexobj(a) or np.iscomplexobj(f)):
        a, f = a.astype(float), f.astype(float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    err = np.zeros(np.broadcast(a, f).shape)
    nz = denom > 0
    err[nz] = np.abs(a - f)[nz] / denom[nz]
    return err


def vjp_check(plan: DstftPlan, signal: Signal, loss, h: float | None = None) -> dict:
    """Compare :func:`backward` against central finite differences.

    ``loss`` maps a ``TfMatrix`` to an object with ``value`` and ``cotangent``
    (see :mod:`dstft.objectives`). ``h`` overrides the default step
    ``1e-4 * max(1, |p|)``. Returns one :class:`GroupReport` per parameter
    group (``"lengths"`` and each position key).
    """
    from .transform import forward
    from .verify import parameter_gradient_fd

    res = loss(forward(plan, signal))
    grads = backward(plan, signal, res.cotangent)
    fd = parameter_gradient_fd(plan, signal, lambda tf, p: loss(tf).value, h=h)
    out = {}
    groups = {"lengths": (grads.d_lengths, fd.d_lengths)}
    groups.update({k: (grads.d_positions[k], fd.d_positions[k]) for k in grads.d_positions})
    for name, (a, f) in groups.items():
        a = np.atleast_1d(a)
        f = np.atleast_1d(f)
        both_zero = (a == 0) & (np.abs(f) == 0)
        err = relative_error(a, f)[~both_zero]
        if err.size == 0:
            out[name] = GroupReport(0.0, 0.0, 0, degenerate=True)
        else:
            out[name] = GroupReport(float(err.max()), float(err.mean()), int(err.size))
    return out
