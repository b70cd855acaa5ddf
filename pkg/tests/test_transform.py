import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import get_window

from dstft import window as win
from dstft.transform import (
    DstftPlan,
    LengthField,
    PlanError,
    PositionField,
    Signal,
    TfMatrix,
    classical_stft,
    forward,
    log_power,
    magnitude,
    make_plan,
    resolve_positions,
)
from dstft.verify import naive_dstft
from dstft.window import WindowSpec


def textbook_stft(x, L, H, t0=0):
    """Zero-padded STFT with a periodic Hann (area 1) centred on t0 + n H, absolute-time phase."""
    w = get_window("hann", L, fftbins=True) / L
    n_frames = 1 + len(x) // H
    pad = np.concatenate([np.zeros(L), x, np.zeros(L + n_frames * H)])
    out = np.empty((L // 2 + 1, n_frames), dtype=complex)
    m = np.arange(L // 2 + 1)
    for n in range(n_frames):
        start = t0 + n * H - L // 2
        seg = pad[start + L : start + 2 * L]
        out[:, n] = np.fft.rfft(seg * w) * np.exp(-2j * np.pi * ((start * m) % L) / L)
    return out


def random_plan(rng, mode, L=32, N=4, kind="hann", span=100):
    M = L // 2 + 1
    lengths = {
        "const": lambda: LengthField.constant(rng.uniform(2, L)),
        "time": lambda: LengthField.time_varying(rng.uniform(2, L, N)),
        "freq": lambda: LengthField.freq_varying(rng.uniform(2, L, M)),
        "tf": lambda: LengthField.time_freq(rng.uniform(2, L, (M, N))),
    }[mode]()
    t = rng.uniform(-L / 2, span + L / 2, N)
    return make_plan(L, lengths, PositionField.explicit(t), N, kind)


class TestPositions:
    def test_uniform(self):
        p = make_plan(64, 32.0, PositionField.uniform_hop(0.0, 64.0), 4)
        np.testing.assert_array_equal(resolve_positions(p), [0, 64, 128, 192])

    def test_varying(self):
        p = make_plan(64, 32.0, PositionField.varying_hop([10.0, 5.0, 5.0]), 3)
        np.testing.assert_array_equal(resolve_positions(p), [10, 15, 20])

    def test_fixed_overlap(self):
        p = make_plan(512, LengthField.time_varying([100.0, 200.0, 400.0]),
                      PositionField.fixed_overlap(0.5, 0.0), 3)
        np.testing.assert_array_equal(resolve_positions(p), [0, 50, 150])

    def test_explicit_copy(self):
        t = np.array([1.5, 2.5])
        p = make_plan(8, 4.0, PositionField.explicit(t), 2)
        out = resolve_positions(p)
        out[0] = 99
        assert p.positions.params["t"][0] == 1.5


class TestPlanValidation:
    def test_shape_mismatch(self):
        with pytest.raises(PlanError):
            make_plan(64, LengthField.time_varying(np.full(3, 10.0)), PositionField.uniform_hop(0, 8), 4)
        with pytest.raises(PlanError):
            make_plan(64, LengthField.freq_varying(np.full(32, 10.0)), PositionField.uniform_hop(0, 8), 4)
        with pytest.raises(PlanError):
            make_plan(64, 10.0, PositionField.explicit([1.0, 2.0]), 3)

    def test_fixed_overlap_needs_time_lengths(self):
        with pytest.raises(PlanError):
            make_plan(64, 10.0, PositionField.fixed_overlap(0.5), 4)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
    def test_overlap_range(self, alpha):
        with pytest.raises(PlanError):
            PositionField.fixed_overlap(alpha)

    def test_length_domain(self):
        with pytest.raises(ValueError):
            make_plan(64, 65.0, PositionField.uniform_hop(0, 8), 4)
        with pytest.raises(ValueError):
            make_plan(64, 1.0, PositionField.uniform_hop(0, 8), 4)

    def test_signal_validation(self):
        with pytest.raises(ValueError):
            Signal([])
        with pytest.raises(ValueError):
            Signal([1.0, np.nan])
        with pytest.raises(ValueError):
            Signal([1.0], sample_rate=0)

    def test_shape(self):
        p = make_plan(64, 10.0, PositionField.uniform_hop(0, 8), 5)
        assert p.shape == (33, 5)


class TestForward:
    @pytest.mark.parametrize("mode", ["const", "time", "freq", "tf"])
    @pytest.mark.parametrize("kind", ["hann", "gauss"])
    def test_matches_naive(self, mode, kind):
        rng = np.random.default_rng(hash((mode, kind)) % 2**32)
        sig = Signal(rng.standard_normal(100))
        for _ in range(5):
            plan = random_plan(rng, mode, kind=kind)
            S = forward(plan, sig).values
            R = naive_dstft(plan, sig).values
            assert np.max(np.abs(S - R)) <= 1e-10

    @given(seed=st.integers(0, 2**32 - 1), mode=st.sampled_from(["const", "time", "freq", "tf"]))
    def test_matches_naive_property(self, seed, mode):
        rng = np.random.default_rng(seed)
        sig = Signal(rng.standard_normal(int(rng.integers(1, 120))))
        plan = random_plan(rng, mode, L=16, N=3, kind=rng.choice(["hann", "gauss"]))
        S = forward(plan, sig).values
        R = naive_dstft(plan, sig).values
        assert np.max(np.abs(S - R)) <= 1e-9 * max(1.0, np.abs(R).max())

    def test_output_metadata(self):
        sig = Signal(np.ones(50), sample_rate=8000.0)
        plan = make_plan(16, 8.0, PositionField.uniform_hop(2.0, 10.0), 5)
        tf = forward(plan, sig)
        assert isinstance(tf, TfMatrix)
        assert tf.shape == (9, 5)
        assert tf.delta_f == 500.0
        np.testing.assert_array_equal(tf.frame_positions, [2, 12, 22, 32, 42])
        np.testing.assert_array_equal(tf.frequencies, 500.0 * np.arange(9))

    def test_dc_signal(self):
        L = 64
        plan = make_plan(L, float(L), PositionField.uniform_hop(100.0, 10.0), 3)
        S = forward(plan, Signal(np.ones(400))).values
        # the DC row is the window's sample sum: 1/2 for the Hann form (1 + cos) / (2 theta)
        np.testing.assert_allclose(np.abs(S[0]), 0.5, rtol=1e-12)
        assert np.max(np.abs(S[2:])) < 1e-12

    def test_impulse(self):
        L, c = 32, 57
        x = np.zeros(128)
        x[c] = 1.0
        plan = make_plan(L, float(L), PositionField.explicit([50.0, 60.3, 70.0]), 3)
        S = forward(plan, Signal(x)).values
        for n, tn in enumerate(resolve_positions(plan)):
            np.testing.assert_allclose(np.abs(S[:, n]), win.eval(plan.window, c - tn, L), rtol=1e-12, atol=1e-15)

    def test_pure_tone_peak_invariance(self):
        L, a, A = 256, 0.1, 2.0
        k = np.arange(2048)
        sig = Signal(A * np.cos(2 * np.pi * a * k))
        peaks = []
        for th in (L / 4, L / 2, L):
            plan = make_plan(L, th, PositionField.explicit([1000.0]), 1, "gauss")
            mag = np.abs(forward(plan, sig).values[:, 0])
            assert np.argmax(mag) == round(a * L)
            peaks.append(mag.max())
        assert (max(peaks) - min(peaks)) / max(peaks) < 0.02
        # the L1-normalized window gives a peak of A / 2
        assert peaks[-1] == pytest.approx(A / 2, rel=0.02)

    def test_zero_padding_far_frames(self):
        plan = make_plan(16, 16.0, PositionField.explicit([-100.0, 5.0, 500.0]), 3)
        S = forward(plan, Signal(np.ones(20))).values
        assert np.all(S[:, 0] == 0) and np.all(S[:, 2] == 0)
        assert np.abs(S[0, 1]) > 0.1

    def test_column_locality_tf(self, rng):
        sig = Signal(rng.standard_normal(100))
        plan = random_plan(rng, "tf").with_positions(t=np.array([20.0, 40.5, 60.2, 80.0]))
        th = plan.lengths.values.copy()
        th[3, 2] = 10.0 if th[3, 2] > 12 else 20.0
        d = forward(plan.with_lengths(th), sig).values - forward(plan, sig).values
        changed = np.argwhere(d != 0)
        np.testing.assert_array_equal(changed, [[3, 2]])

    def test_column_locality_t(self, rng):
        sig = Signal(rng.standard_normal(100))
        plan = random_plan(rng, "time").with_positions(t=np.array([20.0, 40.5, 60.2, 80.0]))
        t = plan.positions.params["t"].copy()
        t[1] += 0.37
        d = forward(plan.with_positions(t=t), sig).values - forward(plan, sig).values
        assert set(np.flatnonzero(np.any(d != 0, axis=0))) == {1}

    def test_shift_phase(self, rng):
        L = 32
        x = np.zeros(300)
        x[100:200] = rng.standard_normal(100)
        plan = make_plan(L, 20.0, PositionField.explicit([150.0, 151.0]), 2)
        S = forward(plan, Signal(x)).values
        # the frame at 151 sees x shifted by one sample; re-reference its phase
        y = np.roll(x, -1)
        R = forward(make_plan(L, 20.0, PositionField.explicit([150.0]), 1), Signal(y)).values[:, 0]
        m = np.arange(L // 2 + 1)
        np.testing.assert_allclose(S[:, 1], np.exp(-2j * np.pi * m / L) * R, atol=1e-13)


class TestClassical:
    def test_bitwise_definition(self, rng):
        sig = Signal(rng.standard_normal(300))
        a = classical_stft(sig, 64, 16, t0=3)
        plan = make_plan(64, 64.0, PositionField.uniform_hop(3, 16), 1 + 300 // 16)
        b = forward(plan, sig)
        np.testing.assert_array_equal(a.values, b.values)

    @pytest.mark.parametrize("t0", [0, 5])
    def test_textbook(self, rng, t0):
        x = rng.standard_normal(500)
        a = classical_stft(Signal(x), 64, 16, t0=t0).values
        b = textbook_stft(x, 64, 16, t0)
        assert np.max(np.abs(a - b)) <= 1e-10

    def test_frame_count(self):
        assert classical_stft(Signal(np.ones(100)), 16, 8).shape == (9, 13)

    def test_bad_hop(self):
        with pytest.raises(ValueError):
            classical_stft(Signal(np.ones(10)), 8, 2.5)


class TestMagnitude:
    def test_values(self):
        tf = TfMatrix(np.array([[3 + 4j, 0], [1, -1j]]), 1.0, np.zeros(2))
        np.testing.assert_array_equal(magnitude(tf), [[5, 0], [1, 1]])
        lp = log_power(tf)
        assert lp[1, 0] == 0.0
        assert lp[0, 1] == pytest.approx(-240.0)

    def test_zero(self):
        tf = TfMatrix(np.zeros((3, 2), complex), 1.0, np.zeros(2))
        assert np.all(magnitude(tf) == 0)
