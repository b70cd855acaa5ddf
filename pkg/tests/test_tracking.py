import numpy as np
import pytest

from dstft.tracking import FrequencyTrack, parse_track_csv, ridge_track, track_csv, track_mse, weighted_average_track
from dstft.transform import PositionField, Signal, TfMatrix, forward, make_plan


def tfm(mag, df=1.0):
    mag = np.asarray(mag, dtype=float)
    return TfMatrix(mag.astype(complex), df, np.arange(mag.shape[1]) * 10.0)


def test_ridge_follows_within_jump():
    mag = np.zeros((10, 4))
    mag[2, 0] = 1
    mag[3, 1] = 1
    mag[8, 2] = 5   # too far to jump to
    mag[4, 2] = 1
    mag[5, 3] = 1
    tr = ridge_track(tfm(mag, 0.5), (0, 4.5), 1)
    np.testing.assert_array_equal(tr.values, [1.0, 1.5, 2.0, 2.5])
    np.testing.assert_array_equal(tr.frame_positions, [0, 10, 20, 30])


def test_ridge_band_and_ties():
    mag = np.ones((6, 2))
    mag[0] = 9
    tr = ridge_track(tfm(mag), (2, 4), 5)
    np.testing.assert_array_equal(tr.values, [2.0, 2.0])


def test_ridge_errors():
    with pytest.raises(ValueError):
        ridge_track(tfm(np.ones((4, 2))), (0, 10), 1)
    with pytest.raises(ValueError):
        ridge_track(tfm(np.ones((4, 2))), (1.2, 1.8), 1)
    with pytest.raises(ValueError):
        ridge_track(tfm(np.ones((4, 2))), (0, 2), -1)


def test_tone_track():
    x = Signal(np.cos(2 * np.pi * 0.125 * np.arange(1024)))
    plan = make_plan(128, 128.0, PositionField.uniform_hop(64.0, 64.0), 14, "gauss")
    tf = forward(plan, x)
    np.testing.assert_allclose(ridge_track(tf, (0, 0.5), 2).values, 0.125)
    np.testing.assert_allclose(weighted_average_track(tf).values, 0.125, atol=2e-3)


def test_mse_and_csv_round_trip():
    a = FrequencyTrack([1.0, 2.0, 3.0], [0.0, 1.0, 2.0])
    assert track_mse(a, [1.0, 2.0, 6.0]) == pytest.approx(3.0)
    b = parse_track_csv(track_csv(a.scaled(1 / 3)))
    np.testing.assert_array_equal(b.values, a.values / 3)
    with pytest.raises(ValueError):
        track_mse(a, [1.0])
    with pytest.raises(ValueError):
        FrequencyTrack([np.nan], [0.0])
