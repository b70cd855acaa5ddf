"""Differentiable scalar objectives on transforms and plan parameters.

Every objective returns an :class:`EvalResult` holding its value and the
pieces needed for backpropagation:

* ``cotangent``: ``dl/dRe(S) + 1j dl/dIm(S)``, to be pulled back through
  :func:`dstft.grad.frame_sensitivities`;
* ``d_theta``: direct gradient with respect to the ``(M, N)`` length field;
* ``d_frame_lengths`` / ``d_t``: direct gradients with respect to per-frame
  lengths and resolved frame centres;
* ``d_params``: gradients already laid out like the plan's parameters;
* ``d_extra``: gradients of auxiliary trainable arrays (e.g. a classifier head).

:func:`to_param_gradients` folds all of these into the plan's parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grad import ParamGradients, contract, frame_sensitivities
from .transform import DstftPlan, LengthField, LengthMode, Signal, TfMatrix


@dataclass(frozen=True)
class ObjectiveConfig:
    lam: float = 0.0
    eps_mag: float = 1e-12
    eps_tv: float = 1e-8
    neighborhood: str = "four"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not (self.eps_mag > 0 and self.eps_tv > 0):
            raise ValueError("eps_mag and eps_tv must be positive")
        if self.neighborhood not in ("four", "eight"):
            raise ValueError("neighborhood must be 'four' or 'eight'")


@dataclass
class EvalResult:
    value: float
    cotangent: np.ndarray | list | None = None
    d_theta: np.ndarray | None = None
    d_frame_lengths: np.ndarray | None = None
    d_t: np.ndarray | None = None
    d_params: ParamGradients | None = None
    d_extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise FloatingPointError(f"objective value is not finite: {self.value}")


def _polar(S: np.ndarray):
    """``|S|`` and the unit phasor ``S/|S|`` (0 where ``S == 0``)."""
    a = np.abs(S)
    unit = np.zeros_like(S)
    nz = a > 0
    # split real/imag: complex division by a subnormal |S| overflows
    unit[nz] = S[nz].real / a[nz] + 1j * (S[nz].imag / a[nz])
    return a, unit


# -- concentration measures --------------------------------------------------

def shannon_entropy(tf: TfMatrix, cfg: ObjectiveConfig = ObjectiveConfig()) -> EvalResult:
    """Shannon entropy of the normalized magnitude distribution ``(|S| + eps) / sum``."""
    S = tf.values
    a, unit = _polar(S)
    w = a + cfg.eps_mag
    # compensated sums keep the value smooth to ~1e-17 under tiny parameter
    # changes, which finite-difference checks rely on
    z = math.fsum(w.ravel())
    p = w / z
    logp = np.log(p)
    H = -math.fsum((p * logp).ravel())
    dH_da = -(logp + H) / z
    return EvalResult(H, cotangent=dH_da * unit)


def spectral_kurtosis(tf: TfMatrix, cfg: ObjectiveConfig = ObjectiveConfig()) -> EvalResult:
    """Mean over frames of ``E_m|S|^4 / (E_m|S|^2 + eps)^2``; large for peaked spectra."""
    S = tf.values
    M, N = S.shape
    q = np.abs(S) ** 2
    A = np.mean(q**2, axis=0)
    B = q.mean(axis=0) + cfg.eps_mag
    value = float(np.mean(A / B**2))
    dK_dq = (2 * q / M) / B**2 - (2 * A / B**3) / M
    dK_dq /= N
    return EvalResult(value, cotangent=2 * dK_dq * S)


# -- parameter regularizers --------------------------------------------------

def _offsets(neighborhood: str):
    four = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    if neighborhood == "four":
        return four
    return four + [(1, 1), (1, -1), (-1, 1), (-1, -1)]


def _shift_slices(dm: int, dn: int, M: int, N: int):
    """Slices ``(src, dst)`` so that ``theta[dst]`` is the neighbour at offset (dm, dn) of ``theta[src]``."""
    def axis(d, size):
        if d >= 0:
            return slice(0, size - d), slice(d, size)
        return slice(-d, size), slice(0, size + d)
    (sm, tm), (sn, tn) = axis(dm, M), axis(dn, N)
    return (sm, sn), (tm, tn)


def nltv_regularizer(lengths: LengthField, cfg: ObjectiveConfig = ObjectiveConfig()) -> EvalResult:
    """Smoothed non-local total variation of a time-frequency length field.

    ``sum_c sqrt(eps_tv^2 + sum_{c' in nbr(c)} (theta_c - theta_c')^2)``;
    border cells use the neighbours they have.
    """
    if lengths.mode is not LengthMode.TIME_FREQ:
        raise ValueError("the NLTV regularizer needs a time-frequency length field")
    th = lengths.values
    M, N = th.shape
    sq = np.zeros_like(th)
    diffs = []
    for dm, dn in _offsets(cfg.neighborhood):
        src, dst = _shift_slices(dm, dn, M, N)
        d = np.zeros_like(th)
        d[src] = th[src] - th[dst]
        sq += d**2
        diffs.append((src, dst, d))
    r = np.sqrt(cfg.eps_tv**2 + sq)
    grad = np.zeros_like(th)
    for src, dst, d in diffs:
        g = d / r
        grad += g
        grad[dst] -= g[src]
    return EvalResult(float(r.sum()), d_theta=grad)


def total_variation(theta_map: np.ndarray, neighborhood: str = "four") -> float:
    """Unsmoothed NLTV of a 2-D field; used to compare length maps."""
    lf = LengthField.time_freq(np.asarray(theta_map, dtype=float))
    return nltv_regularizer(lf, ObjectiveConfig(eps_tv=1e-300, neighborhood=neighborhood)).value


def coverage(positions, lengths, signal_length: float) -> EvalResult:
    """How completely consecutive windows tile ``[0, signal_length)``.

    ``(1/L_s) sum_n min(t_{n+1} - t_n, (theta_{n+1} + theta_n)/2)``, counting
    only pairs whose later window starts before the end of the signal and
    whose earlier window ends after its start. Indicators carry no gradient;
    a tie in the ``min`` takes the hop branch.
    """
    t = np.asarray(positions, dtype=float)
    th = np.asarray(lengths, dtype=float)
    if t.shape != th.shape or t.ndim != 1 or t.size < 2:
        raise ValueError("coverage needs matching per-frame positions and lengths, N >= 2")
    Ls = float(signal_length)
    hop = np.diff(t)
    span = 0.5 * (th[1:] + th[:-1])
    active = (t[1:] - th[1:] / 2 < Ls) & (t[:-1] + th[:-1] / 2 > 0)
    use_hop = hop <= span
    terms = np.where(use_hop, hop, span) * active
    value = float(terms.sum() / Ls)

    d_t = np.zeros_like(t)
    d_th = np.zeros_like(th)
    gh = (active & use_hop) / Ls
    gs = (active & ~use_hop) / Ls
    d_t[1:] += gh
    d_t[:-1] -= gh
    d_th[1:] += 0.5 * gs
    d_th[:-1] += 0.5 * gs
    return EvalResult(value, d_frame_lengths=d_th, d_t=d_t)


# -- frequency tracking ------------------------------------------------------

def freq_estimate(tf: TfMatrix, eps: float = 1e-12) -> np.ndarray:
    """Per-frame magnitude-weighted mean frequency (Hz)."""
    w = np.abs(tf.values) + eps
    return (tf.frequencies @ w) / w.sum(axis=0)


def freq_estimate_vjp(tf: TfMatrix, d_estimate, eps: float = 1e-12) -> np.ndarray:
    """Cotangent on ``S`` given ``dl/dy_hat`` for :func:`freq_estimate`."""
    a, unit = _polar(tf.values)
    w = a + eps
    z = w.sum(axis=0)
    y = (tf.frequencies @ w) / z
    dy_da = (tf.frequencies[:, None] - y[None, :]) / z[None, :]
    return np.asarray(d_estimate)[None, :] * dy_da * unit


def tracking_mse(tfs, truths, cfg: ObjectiveConfig = ObjectiveConfig()) -> EvalResult:
    """``(1/J) sum_j ||y_hat_j - y_bar_j||^2`` over a set of transforms.

    ``cotangent`` is a list with one entry per transform.
    """
    if isinstance(tfs, TfMatrix):
        tfs, truths = [tfs], [truths]
    if len(tfs) != len(truths):
        raise ValueError("one truth track per transform is required")
    J = len(tfs)
    value = 0.0
    cots = []
    for tf, truth in zip(tfs, truths):
        y = freq_estimate(tf, cfg.eps_mag)
        truth = np.asarray(truth, dtype=float)
        if truth.shape != y.shape:
            raise ValueError(f"truth shape {truth.shape} != estimate shape {y.shape}")
        r = y - truth
        value += float(r @ r) / J
        cots.append(freq_estimate_vjp(tf, 2 * r / J, cfg.eps_mag))
    return EvalResult(value, cotangent=cots)


# -- classification ----------------------------------------------------------

def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


def softmax_linear_head(features, weights, bias) -> np.ndarray:
    """Class probabilities ``softmax(W f + b)``."""
    return softmax(np.asarray(weights) @ np.ravel(features) + np.asarray(bias))


def cross_entropy(pred, label: int, eps: float = 1e-12) -> EvalResult:
    """``-log(max(p_label, eps))``; ``d_extra["pred"]`` holds ``dl/dp``."""
    p = np.asarray(pred, dtype=float)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("predicted probabilities must sum to 1")
    if not (0 <= int(label) < p.size) or int(label) != label:
        raise ValueError(f"label {label!r} outside 0..{p.size - 1}")
    label = int(label)
    py = max(p[label], eps)
    d = np.zeros_like(p)
    if p[label] > eps:
        d[label] = -1.0 / p[label]
    return EvalResult(-float(np.log(py)), d_extra={"pred": d})


def head_loss(tf: TfMatrix, weights, bias, label: int, eps: float = 1e-12) -> EvalResult:
    """Cross-entropy of a linear softmax head on ``vec(|S|)``, with all gradients."""
    a, unit = _polar(tf.values)
    f = a.ravel()
    W = np.asarray(weights)
    p = softmax_linear_head(f, W, bias)
    res = cross_entropy(p, label, eps)
    dz = p.copy()
    if p[label] > eps:
        dz[label] -= 1.0
    else:
        dz[:] = 0.0
    d_f = (W.T @ dz).reshape(a.shape)
    return EvalResult(
        res.value,
        cotangent=d_f * unit,
        d_extra={"weights": np.outer(dz, f), "bias": dz},
    )


# -- combination -------------------------------------------------------------

def _acc(a, b, w):
    if b is None:
        return a
    if a is None:
        return w * np.asarray(b)
    return a + w * np.asarray(b)


def composite(terms) -> EvalResult:
    """Weighted sum of ``(weight, EvalResult)`` pairs; all gradients add."""
    value = 0.0
    out = dict(cotangent=None, d_theta=None, d_frame_lengths=None, d_t=None)
    extra: dict = {}
    d_params = None
    for w, r in terms:
        value += w * r.value
        for key in out:
            out[key] = _acc(out[key], getattr(r, key), w)
        if r.d_params is not None:
            scaled = r.d_params.scaled(w)
            d_params = scaled if d_params is None else d_params + scaled
        for k, v in r.d_extra.items():
            extra[k] = _acc(extra.get(k), v, w)
    return EvalResult(value, d_params=d_params, d_extra=extra, **out)


def to_param_gradients(plan: DstftPlan, signal: Signal, res: EvalResult) -> ParamGradients:
    """Backpropagate an :class:`EvalResult` onto ``plan``'s parameters."""
    M, N = plan.shape
    d_theta = np.zeros((M, N))
    d_t = np.zeros(N)
    if res.cotangent is not None:
        dth, dt = frame_sensitivities(plan, signal, res.cotangent)
        d_theta += dth
        d_t += dt
    if res.d_theta is not None:
        d_theta += res.d_theta
    if res.d_frame_lengths is not None:
        # per-frame length is the mean of the column
        d_theta += np.asarray(res.d_frame_lengths)[None, :] / M
    if res.d_t is not None:
        d_t += res.d_t
    grads = contract(plan, d_theta, d_t)
    if res.d_params is not None:
        grads = grads + res.d_params
    return grads


# -- ready-made objectives for the optimizer ---------------------------------
# Each takes (tf, plan, signal_index) and returns an EvalResult to minimize.

def entropy_objective(cfg: ObjectiveConfig = ObjectiveConfig()):
    def objective(tf, plan, j=0):
        return shannon_entropy(tf, cfg)
    return objective


def entropy_nltv_objective(cfg: ObjectiveConfig):
    def objective(tf, plan, j=0):
        terms = [(1.0, shannon_entropy(tf, cfg))]
        if cfg.lam > 0:
            terms.append((cfg.lam, nltv_regularizer(plan.lengths, cfg)))
        return composite(terms)
    return objective


def kurtosis_coverage_objective(signal_length: float, cfg: ObjectiveConfig):
    """Minimized form ``-K - lam * C`` (both terms are to be maximized)."""
    def objective(tf, plan, j=0):
        K = spectral_kurtosis(tf, cfg)
        C = coverage(tf.frame_positions, plan.frame_lengths(), signal_length)
        return composite([(-1.0, K), (-cfg.lam, C)])
    return objective


def tracking_objective(truths, cfg: ObjectiveConfig = ObjectiveConfig()):
    """Per-signal squared tracking error; the optimizer's mean over signals gives the MSE."""
    def objective(tf, plan, j=0):
        y = freq_estimate(tf, cfg.eps_mag)
        r = y - np.asarray(truths[j], dtype=float)
        return EvalResult(float(r @ r), cotangent=freq_estimate_vjp(tf, 2 * r, cfg.eps_mag))
    return objective


def classification_objective(labels, eps: float = 1e-12):
    """Cross-entropy of a linear softmax head on ``|S|``.

    The head's ``weights`` (C, M*N) and ``bias`` (C,) are passed to the
    objective as the optimizer's auxiliary arrays.
    """
    def objective(tf, plan, j, extra):
        return head_loss(tf, extra["weights"], extra["bias"], labels[j], eps)
    return objective


def predict(tf: TfMatrix, weights, bias) -> np.ndarray:
    """Class probabilities of the linear head for one transform."""
    return softmax_linear_head(np.abs(tf.values), weights, bias)
