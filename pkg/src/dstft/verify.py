"""Independent oracles for the transform and its gradients.

``naive_dstft`` evaluates the generalized STFT as a plain sum over the
integers inside each window's support, with no FFT, no floor/fraction split
and no shared framing code. ``finite_diff`` and ``parameter_gradient_fd``
rebuild the full pipeline at perturbed parameters. ``complexity_probe``
times forward and backward passes.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
import numpy as np

from . import window as win
from .grad import ParamGradients, backward, relative_error
from .transform import (
    DstftPlan,
    LengthField,
    PositionField,
    Signal,
    TfMatrix,
    forward,
    make_plan,
    resolve_positions,
)


def naive_dstft(plan: DstftPlan, signal: Signal) -> TfMatrix:
    """Direct triple-loop transform over frames, bins and in-support samples."""
    if not isinstance(signal, Signal):
        signal = Signal(signal)
    s = signal.samples
    L = plan.support
    M, N = plan.shape
    theta = plan.theta_full()
    t = resolve_positions(plan)
    out = np.zeros((M, N), dtype=complex)
    for n in range(N):
        for m in range(M):
            th = theta[m, n]
            k_lo = math.ceil(t[n] - th / 2)
            k_hi = math.floor(t[n] + th / 2)
            acc = 0j
            for k in range(max(k_lo, 0), min(k_hi, s.size - 1) + 1):
                w = win.eval(plan.window, k - t[n], th)
                acc += w * s[k] * np.exp(-2j * np.pi * ((k * m) % L) / L)
            out[m, n] = acc
    return TfMatrix(out, signal.sample_rate / L, t)


# -- parameter access -------------------------------------------------------

def parameter_keys(plan: DstftPlan):
    """Yield ``(group, index)`` selectors for every scalar plan parameter."""
    for idx in np.ndindex(plan.lengths.values.shape):
        yield ("lengths", idx)
    for key, v in plan.positions.params.items():
        for idx in np.ndindex(v.shape):
            yield (key, idx)


def get_param(plan: DstftPlan, selector) -> float:
    group, idx = selector
    if group == "lengths":
        return float(plan.lengths.values[idx])
    return float(plan.positions.params[group][idx])


def set_param(plan: DstftPlan, selector, value: float) -> DstftPlan:
    group, idx = selector
    if group == "lengths":
        v = plan.lengths.values.copy()
        v[idx] = value
        return plan.with_lengths(v)
    v = plan.positions.params[group].copy()
    v[idx] = value
    return plan.with_positions(**{group: v})


def default_step(plan: DstftPlan, selector) -> float:
    """Step giving a frame displacement or length change of about 1e-4 relative."""
    group, _ = selector
    p = get_param(plan, selector)
    if group == "lengths":
        return 1e-4 * max(1.0, abs(p))
    # translation-like parameters: scale by how far one unit moves the frames
    if group == "hop":
        return 1e-5 / max(1, plan.n_frames - 1)
    if group == "alpha":
        return 1e-5 / max(1.0, float(np.sum(plan.lengths.values)))
    return 1e-5


def support_signature(plan: DstftPlan) -> np.ndarray:
    """First and last in-support sample of every cell; changes exactly at window-edge crossings."""
    t = resolve_positions(plan)[None, :]
    half = plan.theta_full() / 2
    return np.stack([np.ceil(t - half), np.floor(t + half)])


def kink_signature(plan: DstftPlan, signal: Signal | None = None) -> np.ndarray:
    """Discrete state that changes whenever the pipeline crosses a non-smooth point.

    Besides the window edges this includes, when ``signal`` is given, the
    signs of the DC and Nyquist rows: those bins are real, so ``|S|`` has a
    corner wherever they cross zero.
    """
    sig = support_signature(plan).ravel()
    if signal is None:
        return sig
    return np.concatenate([sig, np.sign(_real_bins(plan, signal)).ravel()])


def _real_bins(plan: DstftPlan, signal: Signal) -> np.ndarray:
    """DC and Nyquist rows of the transform, by direct summation."""
    s = signal.samples
    half = plan.support // 2
    t = resolve_positions(plan)
    theta = plan.theta_full()[[0, -1]]
    k = np.floor(t)[:, None].astype(np.int64) + np.arange(-half, half + 2)[None, :]
    valid = (k >= 0) & (k < s.size)
    seg = np.where(valid, s[np.clip(k, 0, s.size - 1)], 0.0)
    w = win.eval(plan.window, (k - t[:, None])[None], theta[:, :, None])
    sign = np.stack([np.ones(k.shape), 1.0 - 2.0 * (k % 2)])
    return np.sum(w * seg[None] * sign, axis=-1)


def _free_step(plan, selector, h, direction, signal=None, max_halvings=40) -> float:
    """Largest ``h / 2**i`` reachable in ``direction`` without changing the kink signature (0 if none)."""
    p0 = get_param(plan, selector)
    ref = kink_signature(plan, signal)
    for _ in range(max_halvings):
        try:
            moved = kink_signature(set_param(plan, selector, p0 + direction * h), signal)
        except ValueError:  # stepped outside the parameter domain
            moved = None
        if moved is not None and np.array_equal(moved, ref):
            return h
        h /= 2
    return 0.0


def kink_free_step(plan: DstftPlan, selector, h: float, max_halvings: int = 40,
                   signal: Signal | None = None) -> float:
    """Largest ``h / 2**i`` whose central stencil crosses no non-smooth point.

    The Hann taper is only C1 at its edge and the Gaussian is truncated there,
    so a central difference spanning an edge crossing carries an O(h) error
    unrelated to the analytic derivative. Falls back to ``h / 2**max_halvings``.
    """
    up = _free_step(plan, selector, h, +1, signal, max_halvings)
    dn = _free_step(plan, selector, h, -1, signal, max_halvings)
    step = min(up, dn)
    return step if step > 0 else h / 2**max_halvings


def finite_diff(plan: DstftPlan, signal: Signal, objective, selector, h: float | None = None,
                avoid_kinks: bool = True) -> float:
    """Central difference of ``objective(tf, plan)`` in one plan parameter.

    ``selector`` is ``("lengths", index)`` or ``(position_key, index)``; for
    scalar parameters the index is ``()``. The step defaults to
    :func:`default_step` and is shrunk by :func:`kink_free_step` unless
    ``avoid_kinks`` is false.
    """
    p0 = get_param(plan, selector)
    if h is None:
        h = default_step(plan, selector)
    if not h > 0:
        raise ValueError("step must be positive")
    if avoid_kinks:
        h = kink_free_step(plan, selector, h, signal=signal)
    return _central(_along(plan, signal, objective, selector), p0, h)


def _along(plan, signal, objective, selector):
    if isinstance(objective, str):
        return _ExtendedPath(plan, signal, objective, selector)

    def f(p):
        q = set_param(plan, selector, p)
        return objective(forward(q, signal), q)
    return f


# -- extended-precision evaluation -------------------------------------------
#
# Difference quotients of a float64 pipeline bottom out at about 1e-16 of the
# loss divided by the step, which swamps gradient entries many orders below
# the largest one. The path below re-evaluates the naive sum in long double
# (64-bit mantissa on x86) and recomputes only the cells a perturbation
# touches.

_X = np.longdouble
_PI = np.arccos(_X(-1))
EXTENDED_LOSSES = ("energy", "entropy")


def _ext_window(kind: win.WindowKind, x, theta):
    inside = np.abs(x) <= theta / 2
    if kind is win.WindowKind.HANN:
        w = (1 + np.cos(2 * _PI * x / theta)) / (2 * theta)
    else:
        sigma = theta / 6
        w = np.exp(-_PI * (x / sigma) ** 2) / sigma
    return np.where(inside, w, _X(0))


def _ext_loss(name: str, re, im, eps_mag: float = 1e-12):
    q = re * re + im * im
    if name == "energy":
        return np.sum(q)
    if name == "entropy":
        w = np.sqrt(q) + _X(eps_mag)
        p = w / np.sum(w)
        return -np.sum(p * np.log(p))
    raise ValueError(f"unknown extended loss {name!r}; expected one of {EXTENDED_LOSSES}")


class _ExtendedPath:
    """``p -> loss`` for one plan parameter, evaluated in long double."""

    # unperturbed cells of the most recent (plan, signal), shared across selectors
    _base: tuple = (None, None, None)

    def __init__(self, plan: DstftPlan, signal: Signal, loss: str, selector):
        if loss not in EXTENDED_LOSSES:
            raise ValueError(f"unknown extended loss {loss!r}; expected one of {EXTENDED_LOSSES}")
        self.plan, self.loss, self.selector = plan, loss, selector
        cached_plan, cached_signal, base = _ExtendedPath._base
        if cached_plan is plan and cached_signal is signal:
            self.s, self.theta0, self.t0, self.re, self.im = base
            return
        self.s = np.asarray(signal.samples, dtype=_X)
        self.theta0, self.t0 = self._fields(None)
        self.re, self.im = self._cells(self.theta0, self.t0, np.ones(plan.shape, bool))
        _ExtendedPath._base = (plan, signal, (self.s, self.theta0, self.t0, self.re, self.im))

    def _fields(self, value):
        plan = self.plan
        lengths = np.array(plan.lengths.values, dtype=_X)
        params = {k: np.array(v, dtype=_X) for k, v in plan.positions.params.items()}
        if value is not None:
            group, idx = self.selector
            (lengths if group == "lengths" else params[group])[idx] = value
        M, N = plan.shape
        mode = plan.lengths.mode.name
        theta = {"CONSTANT": lambda v: np.full((M, N), v, dtype=_X),
                 "TIME": lambda v: np.broadcast_to(v[None, :], (M, N)),
                 "FREQ": lambda v: np.broadcast_to(v[:, None], (M, N))}.get(mode, lambda v: v)(lengths)
        pmode = plan.positions.mode.name
        if pmode == "EXPLICIT":
            t = params["t"]
        elif pmode == "UNIFORM_HOP":
            t = params["t0"] + np.arange(N, dtype=_X) * params["hop"]
        elif pmode == "VARYING_HOP":
            t = np.cumsum(params["hops"])
        else:
            per_frame = np.broadcast_to(lengths, (N,)) if lengths.ndim == 0 else lengths
            t = np.empty(N, dtype=_X)
            t[0] = params["t0"]
            for n in range(1, N):
                t[n] = t[n - 1] + params["alpha"] * per_frame[n - 1]
        return theta, t

    def _cells(self, theta, t, mask):
        L = self.plan.support
        M, N = theta.shape
        re = np.zeros((M, N), dtype=_X)
        im = np.zeros((M, N), dtype=_X)
        half = L // 2
        j = np.arange(-half, half + 2)
        for n in np.flatnonzero(mask.any(axis=0)):
            m = np.flatnonzero(mask[:, n])
            reach = np.max(theta[m, n]) / 2
            k = int(np.floor(t[n])) + j
            k = k[(k >= 0) & (k < self.s.size) & (np.abs(k - t[n]) <= reach)]
            w = _ext_window(self.plan.window.kind, k[None, :] - t[n], theta[m, n][:, None])
            ang = 2 * _PI * ((k[None, :] * m[:, None]) % L) / L
            ws = w * self.s[k][None, :]
            re[m, n] = np.sum(ws * np.cos(ang), axis=1)
            im[m, n] = -np.sum(ws * np.sin(ang), axis=1)
        return re, im

    def __call__(self, value):
        theta, t = self._fields(value)
        mask = (theta != self.theta0) | (t != self.t0)[None, :]
        re, im = self.re.copy(), self.im.copy()
        if mask.any():
            re_c, im_c = self._cells(theta, t, mask)
            re[mask], im[mask] = re_c[mask], im_c[mask]
        return _ext_loss(self.loss, re, im)


def _central(f, p0, h):
    return (f(p0 + h) - f(p0 - h)) / (2 * h)


def ridders(f, x: float, h: float, shrink: float = 1.4, ntab: int = 10, safe: float = 2.0,
            side: int = 0):
    """Richardson-extrapolated difference quotient with an error estimate.

    Builds the Neville tableau of difference quotients at steps
    ``h, h/shrink, h/shrink**2, ...`` and returns the entry with the smallest
    estimated error, stopping once higher orders stop helping. ``side = 0``
    uses central differences (even error series); ``side = +1/-1`` uses
    one-sided differences towards that side (full power series).
    """
    if side == 0:
        quotient, c = (lambda s: _central(f, x, s)), shrink**2
    else:
        fx = f(x)
        quotient, c = (lambda s: (f(x + side * s) - fx) / (side * s)), shrink
    a = np.zeros((ntab, ntab), dtype=_X)
    a[0, 0] = quotient(h)
    best, err = a[0, 0], np.inf
    for i in range(1, ntab):
        h /= shrink
        a[0, i] = quotient(h)
        fac = c
        for j in range(1, i + 1):
            a[j, i] = (a[j - 1, i] * fac - a[j - 1, i - 1]) / (fac - 1)
            fac *= c
            e = max(abs(a[j, i] - a[j - 1, i]), abs(a[j, i] - a[j - 1, i - 1]))
            if e <= err:
                err, best = e, a[j, i]
        if abs(a[i, i] - a[i - 1, i - 1]) >= safe * err:
            break
    return float(best), float(err)


def ridders_step(plan: DstftPlan, selector) -> float:
    """Initial (largest) step for :func:`ridders`: a few hundredths of a sample of motion."""
    return 300 * default_step(plan, selector)


def finite_diff_ridders(plan: DstftPlan, signal: Signal, objective, selector,
                        h: float | None = None, rtol: float = 1e-6,
                        max_restarts: int = 6) -> tuple[float, float]:
    """Extrapolated difference that never steps across a non-smooth point.

    The largest kink-free step is found separately on each side. When both
    sides allow a reasonable step a central tableau is used; when a kink sits
    very close on one side, a one-sided tableau runs on the other.

    If the error estimate still exceeds ``rtol`` relative to the result, the
    start step is cut tenfold and the extrapolation repeated for as long as
    the estimate keeps falling.

    ``objective`` is either a callable ``objective(tf, plan)`` evaluated
    through :func:`forward`, or the name of a loss in ``EXTENDED_LOSSES``,
    which is then evaluated by a long-double naive sum.
    """
    if h is None:
        h = ridders_step(plan, selector)
    up = _free_step(plan, selector, h, +1, signal)
    dn = _free_step(plan, selector, h, -1, signal)
    if min(up, dn) >= h / 16:
        h, side = min(up, dn), 0
    elif max(up, dn) > 0:
        h, side = max(up, dn), (1 if up >= dn else -1)
    else:
        h, side = h / 2**40, 0
    f = _along(plan, signal, objective, selector)
    p0 = get_param(plan, selector)
    if isinstance(objective, str):
        p0, h = _X(p0), _X(h)
    best = ridders(f, p0, h, side=side)
    for _ in range(max_restarts):
        if best[1] <= rtol * abs(best[0]):
            break
        h /= 10
        d, err = ridders(f, p0, h, side=side)
        # a growing (or vanishing-by-cancellation) estimate means round-off now dominates
        if err >= best[1] or (d == 0 and err == 0):
            break
        best = (d, err)
    return best


def parameter_gradient_fd(plan: DstftPlan, signal: Signal, objective, h=None,
                          avoid_kinks: bool = True, method: str = "central") -> ParamGradients:
    """Finite-difference gradient for every parameter, shaped like :class:`ParamGradients`.

    ``method`` is ``"central"`` (single step) or ``"ridders"`` (extrapolated).
    """
    d_len = np.zeros(plan.lengths.values.shape)
    d_pos = {k: np.zeros(v.shape) for k, v in plan.positions.params.items()}
    for sel in parameter_keys(plan):
        if method == "ridders":
            g, _ = finite_diff_ridders(plan, signal, objective, sel, h)
        elif method == "central":
            g = finite_diff(plan, signal, objective, sel, h, avoid_kinks)
        else:
            raise ValueError(f"unknown method {method!r}")
        group, idx = sel
        if group == "lengths":
            d_len[idx] = g
        else:
            d_pos[group][idx] = g
    return ParamGradients(d_len, d_pos)


# -- gradient-check suite ----------------------------------------------------

LENGTH_MODES = ("const", "time", "freq", "tf")
POSITION_MODES = ("explicit", "uniform", "varying", "fixed-overlap")


def check_cases(seed: int, signal_length: int = 256, support: int = 64, n_frames: int = 8):
    """Seeded signal and every valid (window, length mode, position mode) plan.

    Yields ``(kind, length_mode, position_mode, plan, signal)``. Fixed-overlap
    positions are only paired with time-varying lengths, the one layout that
    has a length per frame to chain on.
    """
    rng = np.random.default_rng(seed)
    sig = Signal(rng.standard_normal(signal_length))
    L, N, Ls = support, n_frames, signal_length
    M = L // 2 + 1
    for kind in ("hann", "gauss"):
        fields = {"const": LengthField.constant(rng.uniform(20, 60)),
                  "time": LengthField.time_varying(rng.uniform(20, 60, N)),
                  "freq": LengthField.freq_varying(rng.uniform(20, 60, M)),
                  "tf": LengthField.time_freq(rng.uniform(20, 60, (M, N)))}
        t = np.sort(rng.uniform(10, Ls - 10, N))
        for mode, lf in fields.items():
            yield kind, mode, "explicit", make_plan(L, lf, PositionField.explicit(t), N, kind), sig
            pf = PositionField.uniform_hop(rng.uniform(5, 30), rng.uniform(20, 30))
            yield kind, mode, "uniform", make_plan(L, lf, pf, N, kind), sig
            pf = PositionField.varying_hop(np.r_[rng.uniform(5, 30), rng.uniform(20, 30, N - 1)])
            yield kind, mode, "varying", make_plan(L, lf, pf, N, kind), sig
            if mode == "time":
                pf = PositionField.fixed_overlap(rng.uniform(0.3, 0.7), rng.uniform(5, 30))
                yield kind, mode, "fixed-overlap", make_plan(L, lf, pf, N, kind), sig


def _analytic(plan, signal, loss):
    from .objectives import shannon_entropy

    tf = forward(plan, signal)
    cot = 2 * tf.values if loss == "energy" else shannon_entropy(tf).cotangent
    return backward(plan, signal, cot)


def gradcheck_suite(seed: int, kinds=("hann", "gauss"), length_modes=LENGTH_MODES,
                    position_modes=POSITION_MODES, losses=EXTENDED_LOSSES) -> list[dict]:
    """Analytic gradients against extrapolated finite differences for every case.

    The losses are ``sum |S|^2`` (``"energy"``) and the Shannon entropy of
    ``|S|``. Returns one row per case, loss and parameter group with the
    maximum elementwise relative error (entries where both vanish exempt).
    """
    rows = []
    for kind, lmode, pmode, plan, sig in check_cases(seed):
        if kind not in kinds or lmode not in length_modes or pmode not in position_modes:
            continue
        for loss in losses:
            g = _analytic(plan, sig, loss)
            fd = parameter_gradient_fd(plan, sig, loss, method="ridders")
            groups = {"lengths": (g.d_lengths, fd.d_lengths)}
            groups.update({k: (g.d_positions[k], fd.d_positions[k]) for k in g.d_positions})
            for name, (a, f) in groups.items():
                a, f = np.atleast_1d(a).ravel(), np.atleast_1d(f).ravel()
                keep = ~((a == 0) & (f == 0))
                err = relative_error(a[keep], f[keep])
                rows.append({"seed": seed, "window": kind, "length_mode": lmode,
                             "position_mode": pmode, "loss": loss, "group": name,
                             "n": int(keep.sum()), "max_rel_err": float(err.max(initial=0.0))})
    return rows


def gradcheck_csv(rows) -> str:
    buf = io.StringIO()
    fields = ["seed", "window", "length_mode", "position_mode", "loss", "group", "n", "max_rel_err"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "max_rel_err": f"{r['max_rel_err']:.6e}"})
    return buf.getvalue()


# -- timing -----------------------------------------------------------------

def _timing_plan(mode: str, N: int, L: int, kind="hann") -> DstftPlan:
    M = L // 2 + 1
    rng = np.random.default_rng(L * 1000 + N)
    lo, hi = L / 4, L
    if mode == "const":
        lengths = LengthField.constant(0.6 * L)
    elif mode == "time":
        lengths = LengthField.time_varying(rng.uniform(lo, hi, N))
    elif mode == "freq":
        lengths = LengthField.freq_varying(rng.uniform(lo, hi, M))
    elif mode == "tf":
        lengths = LengthField.time_freq(rng.uniform(lo, hi, (M, N)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    t = L / 2 + np.arange(N) * (L / 4) + rng.uniform(0, 1, N)
    return make_plan(L, lengths, PositionField.explicit(t), N, kind)


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _single_threaded():
    # BLAS/FFT pools are not used by the paths timed here, but make the
    # intent explicit for child processes.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def complexity_probe(mode: str, sizes, repeats: int = 5) -> list[dict]:
    """Median wall-clock of forward and backward for each ``(N, L)`` in ``sizes``.

    Returns rows ``{"mode", "N", "L", "forward_s", "backward_s"}``.
    """
    _single_threaded()
    sizes = [tuple(map(int, s)) for s in sizes]
    if any(b[0] < a[0] or b[1] < a[1] for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be sorted ascending")
    rows = []
    for N, L in sizes:
        plan = _timing_plan(mode, N, L)
        span = int(plan.positions.params["t"][-1] + L)
        sig = Signal(np.random.default_rng(7).standard_normal(span))
        tf = forward(plan, sig)
        cot = np.conj(tf.values)
        forward(plan, sig)  # warm caches
        fwd = _median_time(lambda: forward(plan, sig), repeats)
        bwd = _median_time(lambda: backward(plan, sig, cot), repeats)
        rows.append({"mode": mode, "N": N, "L": L, "forward_s": fwd, "backward_s": bwd})
    return rows


def probe_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["mode", "N", "L", "forward_s", "backward_s"],
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "forward_s": f"{r['forward_s']:.6e}", "backward_s": f"{r['backward_s']:.6e}"})
    return buf.getvalue()


def doubling_ratios(rows, key: str = "forward_s") -> list[float]:
    return [b[key] / a[key] for a, b in zip(rows, rows[1:])]
