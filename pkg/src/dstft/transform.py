"""Forward differentiable STFT.

Frame ``n`` is centred at a real position ``t_n`` and analysed with windows
of real length ``theta``; the length may be constant, vary per frame, per
frequency bin, or per time-frequency cell. Non-integer positions are handled
by splitting ``t_n`` into ``floor(t_n)`` (a sample shift and a phase factor)
and ``{t_n}`` (a sub-sample shift of the window argument), so no resampling
of the signal takes place. Reads outside the signal return zero.

When the length does not depend on frequency, each frame is one real FFT of
size ``L``; otherwise the bins are evaluated by direct summation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import window as win
from .window import Which, WindowSpec


class PlanError(ValueError):
    """Inconsistent plan: field shapes do not match the frame/bin counts."""


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float).ravel()
        if x.size < 1:
            raise ValueError("signal must contain at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("signal samples must be finite")
        object.__setattr__(self, "samples", x)
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return self.samples.size


class LengthMode(enum.Enum):
    CONSTANT = "const"
    TIME = "time"
    FREQ = "freq"
    TIME_FREQ = "tf"


class PositionMode(enum.Enum):
    EXPLICIT = "explicit"
    UNIFORM_HOP = "uniform"
    VARYING_HOP = "varying"
    FIXED_OVERLAP = "fixed-overlap"


@dataclass(frozen=True)
class LengthField:
    """Window lengths in one of four layouts.

    ``values`` is a scalar (constant), a length-``N`` vector (one length per
    frame), a length-``M`` vector (one length per bin) or an ``(M, N)``
    matrix.
    """

    mode: LengthMode
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mode", LengthMode(self.mode))
        object.__setattr__(self, "values", np.array(self.values, dtype=float))

    @classmethod
    def constant(cls, theta: float) -> "LengthField":
        return cls(LengthMode.CONSTANT, np.float64(theta))

    @classmethod
    def time_varying(cls, thetas) -> "LengthField":
        return cls(LengthMode.TIME, thetas)

    @classmethod
    def freq_varying(cls, thetas) -> "LengthField":
        return cls(LengthMode.FREQ, thetas)

    @classmethod
    def time_freq(cls, thetas) -> "LengthField":
        return cls(LengthMode.TIME_FREQ, thetas)

    def expected_shape(self, n_bins: int, n_frames: int) -> tuple:
        return {
            LengthMode.CONSTANT: (),
            LengthMode.TIME: (n_frames,),
            LengthMode.FREQ: (n_bins,),
            LengthMode.TIME_FREQ: (n_bins, n_frames),
        }[self.mode]

    def full(self, n_bins: int, n_frames: int) -> np.ndarray:
        """Expand to the ``(M, N)`` field."""
        v = self.values
        if self.mode is LengthMode.CONSTANT:
            return np.full((n_bins, n_frames), float(v))
        if self.mode is LengthMode.TIME:
            return np.broadcast_to(v[None, :], (n_bins, n_frames)).copy()
        if self.mode is LengthMode.FREQ:
            return np.broadcast_to(v[:, None], (n_bins, n_frames)).copy()
        return v.copy()

    def reduce(self, grad_full: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`full`: sum an ``(M, N)`` gradient onto the parameters."""
        if self.mode is LengthMode.CONSTANT:
            return np.float64(grad_full.sum())
        if self.mode is LengthMode.TIME:
            return grad_full.sum(axis=0)
        if self.mode is LengthMode.FREQ:
            return grad_full.sum(axis=1)
        return np.array(grad_full, dtype=float)

    def frame_lengths(self, n_bins: int, n_frames: int) -> np.ndarray:
        """Per-frame length, the mean over bins of the full field."""
        return self.full(n_bins, n_frames).mean(axis=0)

    @property
    def frequency_dependent(self) -> bool:
        return self.mode in (LengthMode.FREQ, LengthMode.TIME_FREQ)


@dataclass(frozen=True)
class PositionField:
    """Frame positions.

    Parameters live in ``params`` keyed by name:

    * explicit: ``t`` (N,)
    * uniform hop: ``t0``, ``hop`` (scalars), ``t_n = t0 + n * hop``
    * varying hop: ``hops`` (N,), ``t_n = sum_{i <= n} hops_i``
    * fixed overlap: ``t0``, ``alpha``, ``t_n = t_{n-1} + alpha * theta_{n-1}``
    """

    mode: PositionMode
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mode", PositionMode(self.mode))
        object.__setattr__(
            self, "params", {k: np.array(v, dtype=float) for k, v in self.params.items()}
        )
        required = {
            PositionMode.EXPLICIT: {"t"},
            PositionMode.UNIFORM_HOP: {"t0", "hop"},
            PositionMode.VARYING_HOP: {"hops"},
            PositionMode.FIXED_OVERLAP: {"t0", "alpha"},
        }[self.mode]
        if set(self.params) != required:
            raise PlanError(f"{self.mode.value} positions need {sorted(required)}")
        if self.mode is PositionMode.FIXED_OVERLAP and not 0 < self.params["alpha"] < 1:
            raise PlanError("overlap ratio alpha must lie in (0, 1)")

    @classmethod
    def explicit(cls, t) -> "PositionField":
        return cls(PositionMode.EXPLICIT, {"t": t})

    @classmethod
    def uniform_hop(cls, t0: float, hop: float) -> "PositionField":
        return cls(PositionMode.UNIFORM_HOP, {"t0": t0, "hop": hop})

    @classmethod
    def varying_hop(cls, hops) -> "PositionField":
        return cls(PositionMode.VARYING_HOP, {"hops": hops})

    @classmethod
    def fixed_overlap(cls, alpha: float, t0: float = 0.0) -> "PositionField":
        return cls(PositionMode.FIXED_OVERLAP, {"t0": t0, "alpha": alpha})

    def with_params(self, **params) -> "PositionField":
        return PositionField(self.mode, {**self.params, **params})


@dataclass(frozen=True)
class DstftPlan:
    window: WindowSpec
    lengths: LengthField
    positions: PositionField
    n_frames: int

    def __post_init__(self):
        if int(self.n_frames) != self.n_frames or self.n_frames < 1:
            raise PlanError("n_frames must be a positive integer")
        object.__setattr__(self, "n_frames", int(self.n_frames))
        M, N = self.n_bins, self.n_frames
        shape = self.lengths.expected_shape(M, N)
        if self.lengths.values.shape != shape:
            raise PlanError(
                f"{self.lengths.mode.value} lengths must have shape {shape}, "
                f"got {self.lengths.values.shape}"
            )
        self.window.check_theta(self.lengths.values)
        p = self.positions.params
        if self.positions.mode is PositionMode.EXPLICIT and p["t"].shape != (N,):
            raise PlanError(f"explicit positions must have shape ({N},)")
        if self.positions.mode is PositionMode.VARYING_HOP and p["hops"].shape != (N,):
            raise PlanError(f"hop vector must have shape ({N},)")
        if self.positions.mode is PositionMode.FIXED_OVERLAP and (
            self.lengths.mode is not LengthMode.TIME
        ):
            raise PlanError("fixed-overlap positions require per-frame window lengths")
        for key, v in p.items():
            if not np.all(np.isfinite(v)):
                raise PlanError(f"position parameter {key!r} must be finite")

    @property
    def support(self) -> int:
        return self.window.support

    @property
    def n_bins(self) -> int:
        return self.window.n_bins

    @property
    def shape(self) -> tuple:
        return (self.n_bins, self.n_frames)

    def theta_full(self) -> np.ndarray:
        return self.lengths.full(self.n_bins, self.n_frames)

    def frame_lengths(self) -> np.ndarray:
        return self.lengths.frame_lengths(self.n_bins, self.n_frames)

    def with_lengths(self, values) -> "DstftPlan":
        return replace(self, lengths=LengthField(self.lengths.mode, values))

    def with_positions(self, **params) -> "DstftPlan":
        return replace(self, positions=self.positions.with_params(**params))


def make_plan(
    support: int,
    lengths: LengthField | float,
    positions: PositionField,
    n_frames: int,
    kind="hann",
) -> DstftPlan:
    """Convenience constructor; a bare number for ``lengths`` means constant."""
    if not isinstance(lengths, LengthField):
        lengths = LengthField.constant(lengths)
    return DstftPlan(WindowSpec(kind, support), lengths, positions, n_frames)


@dataclass(frozen=True)
class TfMatrix:
    """Complex ``(M, N)`` transform; rows are frequency bins, columns frames."""

    values: np.ndarray
    delta_f: float
    frame_positions: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.delta_f


def resolve_positions(plan: DstftPlan) -> np.ndarray:
    """Frame centres ``t_n`` (length ``N``) implied by the position field."""
    N = plan.n_frames
    pos = plan.positions
    p = pos.params
    if pos.mode is PositionMode.EXPLICIT:
        return p["t"].copy()
    if pos.mode is PositionMode.UNIFORM_HOP:
        return float(p["t0"]) + np.arange(N) * float(p["hop"])
    if pos.mode is PositionMode.VARYING_HOP:
        return np.cumsum(p["hops"])
    theta = plan.lengths.values
    t = np.empty(N)
    t[0] = float(p["t0"])
    for n in range(1, N):
        t[n] = t[n - 1] + float(p["alpha"]) * theta[n - 1]
    return t


def _split(t: np.ndarray):
    fl = np.floor(t)
    return fl.astype(np.int64), t - fl


def _segments(samples: np.ndarray, starts: np.ndarray, k: np.ndarray) -> np.ndarray:
    idx = starts[:, None] + k[None, :]
    valid = (idx >= 0) & (idx < samples.size)
    out = np.zeros(idx.shape)
    out[valid] = samples[idx[valid]]
    return out


def _phase(starts: np.ndarray, L: int) -> np.ndarray:
    M = L // 2 + 1
    # reduce mod L first so the angle stays exact for large frame indices
    r = (np.mod(starts, L)[:, None] * np.arange(M)[None, :]) % L
    return np.exp(-2j * np.pi * r / L)


def transform_with(plan: DstftPlan, samples: np.ndarray, t: np.ndarray, which=(Which.VALUE,)):
    """Transforms of ``samples`` with the window or its derivatives.

    Returns one ``(M, N)`` complex matrix per entry of ``which``. All share
    framing, phase and FFT machinery; only the taper differs.
    """
    spec = plan.window
    L = spec.support
    k = spec.offsets()
    starts, frac = _split(np.asarray(t, dtype=float))
    segs = _segments(samples, starts, k)
    phase = _phase(starts, L)
    if not plan.lengths.frequency_dependent:
        theta_n = plan.frame_lengths()
        shift = -(L // 2 - 1)
        out = []
        for w in which:
            tapers = win.sample_frame(spec, frac, theta_n, w)
            spec_nm = np.fft.rfft(np.roll(tapers * segs, shift, axis=1), axis=1)
            out.append((spec_nm * phase).T)
        return out
    return _direct(plan, segs, frac, phase, which)


_CHUNK_ELEMS = 1 << 21


def _direct(plan, segs, frac, phase, which):
    spec = plan.window
    L = spec.support
    M, N = plan.shape
    theta = plan.theta_full()
    k = spec.offsets()
    kernel = np.exp(-2j * np.pi * (np.outer(np.arange(M), k) % L) / L)
    out = [np.empty((M, N), dtype=complex) for _ in which]
    chunk = max(1, _CHUNK_ELEMS // (M * L))
    for n0 in range(0, N, chunk):
        sl = slice(n0, min(n0 + chunk, N))
        th = theta[:, sl].T  # (c, M)
        # only offsets inside the widest window of these frames can contribute
        reach = 0.5 * th.max(axis=1)
        lo = int(np.searchsorted(k, np.min(frac[sl] - reach), side="left"))
        hi = int(np.searchsorted(k, np.max(frac[sl] + reach), side="right"))
        # (re, im) interleaved so the real taper contracts without upcasting
        g = kernel[None, :, lo:hi] * segs[sl, None, lo:hi]
        g = g.view(float).reshape(g.shape + (2,))
        for i, w in enumerate(which):
            taper = win.sample_frame(spec, frac[sl, None], th, w, offsets=k[lo:hi])
            re_im = np.einsum("cmk,cmkz->cmz", taper, g)
            out[i][:, sl] = ((re_im[..., 0] + 1j * re_im[..., 1]) * phase[sl]).T
    return out


def forward(plan: DstftPlan, signal: Signal) -> TfMatrix:
    """Differentiable STFT of ``signal`` under ``plan``."""
    if not isinstance(signal, Signal):
        signal = Signal(signal)
    t = resolve_positions(plan)
    (values,) = transform_with(plan, signal.samples, t)
    return TfMatrix(values, signal.sample_rate / plan.support, t)


def classical_stft(signal: Signal, L: int, H: int, t0: int = 0, kind="hann") -> TfMatrix:
    """Ordinary STFT: full-length window, integer hop, ``N = 1 + L_s // H`` frames."""
    if not isinstance(signal, Signal):
        signal = Signal(signal)
    if int(H) != H or H < 1:
        raise ValueError("hop must be a positive integer")
    n_frames = 1 + len(signal) // int(H)
    plan = make_plan(L, float(L), PositionField.uniform_hop(t0, H), n_frames, kind)
    return forward(plan, signal)


def magnitude(tf: TfMatrix) -> np.ndarray:
    return np.abs(tf.values)


def log_power(tf: TfMatrix, floor: float = 1e-12) -> np.ndarray:
    """``20 log10(max(|S|, floor))`` in dB."""
    return 20.0 * np.log10(np.maximum(np.abs(tf.values), floor))
