"""Frequency tracks from spectrograms and their error against ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import freq_estimate
from .transform import TfMatrix


@dataclass
class FrequencyTrack:
    """One frequency (Hz) per frame, with the frame centres (samples)."""

    values: np.ndarray
    frame_positions: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.frame_positions = np.asarray(self.frame_positions, dtype=float)
        if self.values.ndim != 1 or self.values.shape != self.frame_positions.shape:
            raise ValueError("values and frame_positions must be 1-D of equal length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("track values must be finite")

    def __len__(self):
        return self.values.size

    def scaled(self, factor: float) -> "FrequencyTrack":
        return FrequencyTrack(self.values * factor, self.frame_positions)


def weighted_average_track(tf: TfMatrix, eps: float = 1e-12) -> FrequencyTrack:
    """Per-frame magnitude-weighted mean frequency (same numbers as ``freq_estimate``)."""
    return FrequencyTrack(freq_estimate(tf, eps), tf.frame_positions)


def ridge_track(tf: TfMatrix, band, max_jump_bins: int) -> FrequencyTrack:
    """Greedy band-limited ridge: per-frame argmax of ``|S|`` near the previous bin.

    The first frame takes the argmax over the whole band; each later frame
    searches only bins within ``max_jump_bins`` of the previous pick (and
    inside the band). Ties go to the lower bin.
    """
    f_lo, f_hi = map(float, band)
    M = tf.values.shape[0]
    df = tf.delta_f
    if f_lo < 0 or f_hi > M * df or f_hi < f_lo:
        raise ValueError(f"band [{f_lo}, {f_hi}] outside [0, {M * df}]")
    if max_jump_bins < 0:
        raise ValueError("max_jump_bins must be non-negative")
    lo = int(np.ceil(f_lo / df - 1e-9))
    hi = min(int(np.floor(f_hi / df + 1e-9)), M - 1)
    if hi < lo:
        raise ValueError("band contains no frequency bin")
    mag = np.abs(tf.values)
    N = mag.shape[1]
    bins = np.empty(N, dtype=int)
    prev = None
    for n in range(N):
        a, b = (lo, hi) if prev is None else (max(lo, prev - max_jump_bins), min(hi, prev + max_jump_bins))
        # argmax returns the first (lowest) index among ties
        prev = a + int(np.argmax(mag[a : b + 1, n]))
        bins[n] = prev
    return FrequencyTrack(bins * df, tf.frame_positions)


def track_mse(track: FrequencyTrack, truth) -> float:
    """Mean squared difference between two tracks (or a track and an array)."""
    y = track.values if isinstance(track, FrequencyTrack) else np.asarray(track, dtype=float)
    t = truth.values if isinstance(truth, FrequencyTrack) else np.asarray(truth, dtype=float)
    if y.shape != t.shape:
        raise ValueError(f"track lengths differ: {y.shape} vs {t.shape}")
    return float(np.mean((y - t) ** 2))


def track_csv(track: FrequencyTrack) -> str:
    """``frame_position,frequency`` rows with a header, 17 significant digits."""
    lines = ["frame_position,frequency\n"]
    lines += ["%.17g,%.17g\n" % (p, v) for p, v in zip(track.frame_positions, track.values)]
    return "".join(lines)


def parse_track_csv(text: str) -> FrequencyTrack:
    rows = [ln.split(",") for ln in text.strip().splitlines()[1:] if ln.strip()]
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return FrequencyTrack(arr[:, 1], arr[:, 0])
