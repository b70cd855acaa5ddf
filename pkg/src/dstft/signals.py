"""Seeded synthetic test signals, noise injection and signal file I/O.

Four scenario kinds are provided:

``three-component``
    A linear chirp, a stationary tone that the chirp passes close to, and a
    short Gaussian-enveloped burst. Short windows smear the tone, long windows
    smear the burst.
``shock-train``
    Damped-sinusoid shocks at irregular times with random carriers and
    durations; exactly zero outside the declared shock supports.
``variable-period-sine``
    A unit-amplitude sine whose frequency oscillates slowly around a centre
    value; the instantaneous frequency is returned as ground truth.
``multi-harmonic``
    Ten harmonics (amplitude ``1/k``) of a smoothly wandering fundamental.

Every generator is a pure function of the scenario and its seed.
"""

from __future__ import annotations

import enum
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.ndimage import gaussian_filter1d

from .transform import Signal

log = logging.getLogger(__name__)


class NyquistError(ValueError):
    """A requested frequency is at or above half the sample rate."""


class ParseError(ValueError):
    """Malformed input file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


# -- scenarios ---------------------------------------------------------------

class ScenarioKind(enum.Enum):
    THREE_COMPONENT = "three-component"
    SHOCK_TRAIN = "shock-train"
    VARIABLE_PERIOD_SINE = "variable-period-sine"
    MULTI_HARMONIC = "multi-harmonic"

    @classmethod
    def parse(cls, name) -> "ScenarioKind":
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("_", "-")
        for k in cls:
            if k.value == key:
                return k
        raise ValueError(f"unknown scenario {name!r}; expected one of {[k.value for k in cls]}")


_DEFAULTS = {
    ScenarioKind.THREE_COMPONENT: dict(
        chirp_start=0.03, chirp_stop=0.22, tone=0.15, tone_amp=0.2, tone_start=0.0, tone_stop=1.0,
        burst_center=0.62, burst_freq=0.35, burst_width=12.0, burst_amp=4.0, snr_db=np.inf,
    ),
    ScenarioKind.SHOCK_TRAIN: dict(
        n_shocks=(5, 10), freq_range=(0.08, 0.4), duration_range=(24, 64),
        min_gap=40, snr_db=20.0,
    ),
    ScenarioKind.VARIABLE_PERIOD_SINE: dict(
        f_center=0.1, f_dev=0.03, mod_period=2000.0, phase=0.0, snr_db=np.inf,
    ),
    ScenarioKind.MULTI_HARMONIC: dict(
        f0_center=0.02, f0_dev=0.0009, smoothness=50.0, n_harmonics=10, snr_db=30.0,
    ),
}


@dataclass(frozen=True)
class SyntheticScenario:
    """Recipe for a synthetic signal.

    Frequencies in ``params`` are in cycles per sample (multiply by
    ``sample_rate`` for Hz); durations and times are in samples. Missing
    parameters take the kind's defaults.
    """

    kind: ScenarioKind
    length: int
    seed: int = 0
    sample_rate: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind.parse(self.kind))
        if self.length < 4:
            raise ValueError("scenario length must be at least 4 samples")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        unknown = set(self.params) - set(_DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind.value}: {sorted(unknown)}")

    def resolved(self) -> dict:
        return {**_DEFAULTS[self.kind], **self.params}


@dataclass
class Synthetic:
    """Generated signal plus ground truth.

    ``inst_freq`` is the per-sample instantaneous frequency in Hz (of the
    fundamental for multi-harmonic), or ``None`` when not defined.
    ``meta`` carries scenario-specific facts such as shock centres/supports.
    """

    signal: Signal
    inst_freq: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def track_at(self, positions) -> np.ndarray:
        """Ground-truth frequency (Hz) at fractional sample positions."""
        if self.inst_freq is None:
            raise ValueError("this scenario has no frequency ground truth")
        idx = np.arange(self.inst_freq.size)
        return np.interp(np.asarray(positions, dtype=float), idx, self.inst_freq)


def _nyquist_check(freqs, what: str):
    f = np.max(np.abs(np.atleast_1d(freqs)))
    if f >= 0.5:
        raise NyquistError(f"{what} reaches {f:.4g} cycles/sample, at or above Nyquist")


def _phase(freq):
    # left Riemann sum so that phase[0] == 0
    return 2 * np.pi * np.concatenate(([0.0], np.cumsum(freq[:-1])))


def _three_component(n, p, rng):
    _nyquist_check([p["chirp_start"], p["chirp_stop"], p["tone"], p["burst_freq"]], "three-component")
    k = np.arange(n, dtype=float)
    f_chirp = p["chirp_start"] + (p["chirp_stop"] - p["chirp_start"]) * k / n
    chirp = np.cos(_phase(f_chirp))
    on = (k >= p["tone_start"] * n) & (k < p["tone_stop"] * n)
    tone = np.where(on, p["tone_amp"] * np.cos(2 * np.pi * p["tone"] * k), 0.0)
    c = p["burst_center"] * n
    burst = p["burst_amp"] * np.exp(-0.5 * ((k - c) / p["burst_width"]) ** 2) * np.cos(2 * np.pi * p["burst_freq"] * (k - c))
    # keep the burst to its nominal +-4 sigma footprint
    burst[np.abs(k - c) > 4 * p["burst_width"]] = 0.0
    meta = {"chirp": f_chirp, "tone": p["tone"], "burst_center": c, "burst_width": p["burst_width"]}
    return chirp + tone + burst, None, meta


def _shock_train(n, p, rng):
    lo_f, hi_f = p["freq_range"]
    _nyquist_check([lo_f, hi_f], "shock carrier")
    lo_n, hi_n = p["n_shocks"]
    count = int(rng.integers(lo_n, hi_n + 1))
    dmin, dmax = p["duration_range"]
    durations = rng.uniform(dmin, dmax, count)
    # irregular spacing: random gaps, rescaled to fill the record
    gaps = rng.uniform(0.5, 2.0, count + 1)
    free = n - durations.sum() - (count + 1) * p["min_gap"]
    if free < 0:
        raise ValueError("signal too short for the requested shocks")
    gaps = p["min_gap"] + free * gaps / gaps.sum()
    starts = np.cumsum(gaps[:-1]) + np.concatenate(([0.0], np.cumsum(durations[:-1])))
    centers = starts + durations / 2
    freqs = rng.uniform(lo_f, hi_f, count)
    k = np.arange(n, dtype=float)
    x = np.zeros(n)
    for c, d, f in zip(centers, durations, freqs):
        inside = np.abs(k - c) < d / 2
        env = np.exp(-6 * np.abs(k[inside] - c) / d)
        x[inside] += env * np.cos(2 * np.pi * f * (k[inside] - c))
    supports = np.stack([centers - durations / 2, centers + durations / 2], axis=1)
    return x, None, {"centers": centers, "durations": durations, "carriers": freqs, "supports": supports}


def _variable_period_sine(n, p, rng):
    k = np.arange(n, dtype=float)
    f = p["f_center"] + p["f_dev"] * np.sin(2 * np.pi * k / p["mod_period"] + p["phase"])
    _nyquist_check(f, "variable-period sine")
    if np.any(f <= 0):
        raise ValueError("instantaneous frequency must stay positive")
    return np.sin(_phase(f)), f, {}


def _smooth_profile(n, smoothness, rng):
    # integrated, then low-passed white noise, normalized to [-1, 1]
    walk = np.cumsum(rng.standard_normal(n))
    walk = gaussian_filter1d(walk, smoothness, mode="nearest")
    walk -= walk.mean()
    peak = np.max(np.abs(walk))
    return walk / peak if peak > 0 else walk


def _multi_harmonic(n, p, rng):
    f0 = p["f0_center"] + p["f0_dev"] * _smooth_profile(n, p["smoothness"], rng)
    K = int(p["n_harmonics"])
    _nyquist_check(K * f0, f"harmonic {K}")
    if np.any(f0 <= 0):
        raise ValueError("fundamental must stay positive")
    ph = _phase(f0)
    x = sum(np.cos(k * ph) / k for k in range(1, K + 1))
    return x, f0, {"n_harmonics": K}


_GENERATORS = {
    ScenarioKind.THREE_COMPONENT: _three_component,
    ScenarioKind.SHOCK_TRAIN: _shock_train,
    ScenarioKind.VARIABLE_PERIOD_SINE: _variable_period_sine,
    ScenarioKind.MULTI_HARMONIC: _multi_harmonic,
}


def generate(scenario: SyntheticScenario) -> Synthetic:
    """Synthesize the scenario's signal (noise included if ``snr_db`` is finite).

    Shock supports, centres and the pre-noise signal are in ``meta``; the
    instantaneous frequency (Hz) is returned for the sine and harmonic kinds.
    """
    p = scenario.resolved()
    rng = np.random.default_rng(scenario.seed)
    x, f_inst, meta = _GENERATORS[scenario.kind](scenario.length, p, rng)
    sig = Signal(x, scenario.sample_rate)
    meta["clean"] = sig
    snr = p.get("snr_db", np.inf)
    if np.isfinite(snr):
        # independent noise stream, still determined by the seed
        sig = add_awgn(sig, snr, seed=(scenario.seed, 1))
    inst = None if f_inst is None else f_inst * scenario.sample_rate
    return Synthetic(sig, inst, meta)


def add_awgn(signal: Signal, snr_db: float, seed=0) -> Signal:
    """Add white Gaussian noise at ``snr_db`` relative to the signal's mean power.

    ``snr_db = inf`` returns the signal unchanged.
    """
    if not isinstance(signal, Signal):
        signal = Signal(signal)
    if snr_db == np.inf:
        return signal
    if np.isnan(snr_db):
        raise ValueError("snr_db is NaN")
    power = float(np.mean(signal.samples**2))
    if power == 0:
        raise ValueError("cannot set an SNR relative to a zero-power signal")
    sigma = np.sqrt(power / 10 ** (snr_db / 10))
    noise = np.random.default_rng(seed).normal(0.0, sigma, signal.samples.size)
    return Signal(signal.samples + noise, signal.sample_rate)


# -- datasets ------------------------------------------------------------------

SPLITS = ("train", "val", "test")


@dataclass
class LabeledDataset:
    """Signals with per-signal targets (frequency tracks or class labels) and split tags."""

    signals: list
    targets: list
    splits: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.signals) != len(self.targets):
            raise ValueError("signals and targets differ in length")
        if not self.splits:
            self.splits = ["train"] * len(self.signals)
        if len(self.splits) != len(self.signals):
            raise ValueError("one split tag per signal required")
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")

    def __len__(self):
        return len(self.signals)

    def assign_splits(self, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> "LabeledDataset":
        """Random split into train/val/test with the given fractions (must sum to 1)."""
        fr = np.asarray(fractions, dtype=float)
        if fr.shape != (3,) or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
            raise ValueError("need three non-negative fractions summing to 1")
        J = len(self)
        counts = np.floor(fr * J).astype(int)
        counts[0] += J - counts.sum()
        order = np.random.default_rng(seed).permutation(J)
        tags = np.empty(J, dtype=object)
        tags[order] = np.repeat(SPLITS, counts)
        return LabeledDataset(list(self.signals), list(self.targets), list(tags))

    def subset(self, split: str) -> "LabeledDataset":
        keep = [i for i, s in enumerate(self.splits) if s == split]
        return LabeledDataset([self.signals[i] for i in keep], [self.targets[i] for i in keep],
                              [split] * len(keep))


def tracking_dataset(size: int, length: int, seed: int = 0, snr_db: float = 40.0,
                     f_center=(0.06, 0.14), f_dev=(0.01, 0.03), mod_period=(1000.0, 4000.0)):
    """Variable-period sines with random parameters; targets are per-sample frequency tracks."""
    rng = np.random.default_rng(seed)
    sigs, tracks = [], []
    for j in range(size):
        params = dict(f_center=rng.uniform(*f_center), f_dev=rng.uniform(*f_dev),
                      mod_period=rng.uniform(*mod_period), phase=rng.uniform(0, 2 * np.pi),
                      snr_db=snr_db)
        syn = generate(SyntheticScenario(ScenarioKind.VARIABLE_PERIOD_SINE, length, seed * 100003 + j,
                                         params=params))
        sigs.append(syn.signal)
        tracks.append(syn.inst_freq)
    return LabeledDataset(sigs, tracks)


def two_class_dataset(size: int, length: int, seed: int = 0, snr_db: float = 10.0):
    """Two classes that differ in time-frequency structure.

    Class 0 is a steady tone; class 1 is the same kind of tone broken into
    short bursts. Both share the carrier range, so the class is carried by
    the temporal structure, which a suitable window length resolves best.
    """
    rng = np.random.default_rng(seed)
    k = np.arange(length, dtype=float)
    sigs, labels = [], []
    for j in range(size):
        label = j % 2
        f = rng.uniform(0.1, 0.3)
        x = np.cos(2 * np.pi * f * k + rng.uniform(0, 2 * np.pi))
        if label == 1:
            period = rng.uniform(24, 48)
            gate = (np.mod(k + rng.uniform(0, period), period) < period / 2).astype(float)
            x = x * gate * np.sqrt(2)
        sigs.append(add_awgn(Signal(x), snr_db, seed=(seed, j)))
        labels.append(label)
    return LabeledDataset(sigs, labels)


# -- file I/O ------------------------------------------------------------------

class FileFormat(enum.Enum):
    WAV_PCM16 = "wav-pcm16"
    WAV_FLOAT32 = "wav-float32"
    CSV = "csv"
    RAW_F64 = "raw"

    @classmethod
    def parse(cls, name) -> "FileFormat":
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("_", "-")
        aliases = {"wav": cls.WAV_PCM16, "pcm16": cls.WAV_PCM16, "float32": cls.WAV_FLOAT32,
                   "raw-f64": cls.RAW_F64, "rawf64": cls.RAW_F64, "f64": cls.RAW_F64}
        if key in aliases:
            return aliases[key]
        for f in cls:
            if f.value == key:
                return f
        raise ValueError(f"unknown file format {name!r}")


def sidecar_path(path) -> str:
    return os.fspath(path) + ".json"


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temporary file in the same directory and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_csv(values) -> str:
    """17-significant-digit CSV; vectors one value per line, matrices row-major."""
    a = np.asarray(values, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    elif a.ndim != 2:
        raise ValueError("CSV output supports 1-D or 2-D arrays")
    return "".join(",".join("%.17g" % v for v in row) + "\n" for row in a)


def parse_csv(data: bytes | str) -> list:
    """Parse numeric CSV into a list of rows; errors carry the byte offset of the bad field."""
    raw = data.encode() if isinstance(data, str) else data
    rows = []
    pos = 0
    for line in raw.splitlines(keepends=True):
        body = line.rstrip(b"\r\n")
        if body.strip():
            row = []
            off = pos
            for fld in body.split(b","):
                txt = fld.strip()
                try:
                    if not txt:
                        raise ValueError
                    v = float(txt)
                except ValueError:
                    raise ParseError(f"not a number: {fld.decode(errors='replace')!r}", off) from None
                if not np.isfinite(v):
                    raise ParseError("non-finite value", off)
                row.append(v)
                off += len(fld) + 1
            rows.append(row)
        pos += len(line)
    return rows


def read_csv_matrix(path) -> np.ndarray:
    rows = parse_csv(_read_bytes(path))
    if not rows:
        raise ParseError("empty CSV", 0)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ParseError("ragged CSV rows", 0)
    return np.array(rows, dtype=float)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _check_riff(raw: bytes):
    if len(raw) < 12 or raw[:4] != b"RIFF":
        raise ParseError("missing RIFF header", 0)
    if raw[8:12] != b"WAVE":
        raise ParseError("not a WAVE file", 8)


def _load_wav(path, fmt: FileFormat) -> Signal:
    raw = _read_bytes(path)
    _check_riff(raw)
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise ParseError(f"unreadable WAV: {e}", 12) from None
    if data.ndim != 1:
        raise ParseError(f"expected mono audio, found {data.shape[1]} channels", 12)
    if fmt is FileFormat.WAV_PCM16:
        if data.dtype != np.int16:
            raise ParseError(f"expected 16-bit PCM, found {data.dtype}", 12)
        x = data.astype(float) / 32768.0
    else:
        if data.dtype != np.float32:
            raise ParseError(f"expected 32-bit float samples, found {data.dtype}", 12)
        x = data.astype(float)
    return Signal(x, float(rate))


def _save_wav(x: np.ndarray, rate: float, path, fmt: FileFormat):
    if rate != int(rate):
        raise ValueError("WAV needs an integer sample rate")
    if fmt is FileFormat.WAV_PCM16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    buf = io.BytesIO()
    wavfile.write(buf, int(rate), data)
    atomic_write(path, buf.getvalue())


def _load_raw(path) -> Signal:
    side = sidecar_path(path)
    text = _read_bytes(side)
    try:
        meta = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"sidecar: {e.msg}", e.pos) from None
    try:
        n = int(meta["length"])
        rate = float(meta.get("sample_rate", 1.0))
        endian = meta.get("endianness", "little")
    except (KeyError, TypeError, ValueError):
        raise ParseError("sidecar lacks a valid 'length'", 0) from None
    if endian not in ("little", "big"):
        raise ParseError(f"bad endianness {endian!r}", 0)
    raw = _read_bytes(path)
    if len(raw) != 8 * n:
        raise ParseError(f"expected {8 * n} bytes for {n} samples, found {len(raw)}", min(len(raw), 8 * n))
    x = np.frombuffer(raw, dtype="<f8" if endian == "little" else ">f8").astype(float)
    return Signal(x, rate)


def load(path, fmt) -> Signal:
    """Read a mono signal.

    PCM16 samples map to ``int / 32768``. CSV accepts any arrangement of
    comma/newline-separated numbers (flattened row-major). Raw files are
    little-endian float64 with a ``PATH.json`` sidecar giving ``length``,
    ``sample_rate`` and ``endianness``.
    """
    fmt = FileFormat.parse(fmt)
    if fmt in (FileFormat.WAV_PCM16, FileFormat.WAV_FLOAT32):
        return _load_wav(path, fmt)
    if fmt is FileFormat.CSV:
        rows = parse_csv(_read_bytes(path))
        vals = [v for r in rows for v in r]
        if not vals:
            raise ParseError("empty CSV", 0)
        return Signal(np.array(vals))
    return _load_raw(path)


def save(obj, path, fmt) -> None:
    """Write a :class:`Signal` (any format) or a real matrix (CSV / raw only)."""
    fmt = FileFormat.parse(fmt)
    if isinstance(obj, Signal):
        x, rate = obj.samples, obj.sample_rate
    else:
        x, rate = np.asarray(obj, dtype=float), 1.0
    if fmt is FileFormat.CSV:
        atomic_write(path, format_csv(x).encode())
    elif fmt is FileFormat.RAW_F64:
        atomic_write(path, np.ascontiguousarray(x, dtype="<f8").tobytes())
        side = {"length": int(x.size), "sample_rate": rate, "endianness": "little"}
        if x.ndim == 2:
            side["shape"] = list(x.shape)
        atomic_write(sidecar_path(path), (json.dumps(side) + "\n").encode())
    else:
        if x.ndim != 1:
            raise ValueError("WAV output needs a 1-D signal")
        _save_wav(x, rate, path, fmt)
