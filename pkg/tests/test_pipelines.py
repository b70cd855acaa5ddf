from dataclasses import replace

import numpy as np
import pytest

from dstft import pipelines as pl
from dstft.transform import LengthMode, resolve_positions


def test_warm_start_shapes():
    plan = pl.entropy_plan(theta=30.0, support=64, hop=16.0, n_frames=5)
    for mode, shape in [("time", (5,)), ("freq", (33,)), ("tf", (33, 5))]:
        w = pl.warm_start(plan, mode)
        assert w.lengths.values.shape == shape
        np.testing.assert_array_equal(w.lengths.values, plan.lengths.values)
    assert pl.warm_start(plan, "const").lengths.mode is LengthMode.CONSTANT
    with pytest.raises(ValueError):
        pl.warm_start(plan, "diag")


def test_harmonic_band_separates_neighbours():
    f0 = np.array([0.0195, 0.0205])
    lo, hi = pl.harmonic_band(f0, 10)
    assert 9 * 0.0205 < lo < 10 * 0.0195 and 10 * 0.0205 < hi < 11 * 0.0195


def test_mean_center_distance():
    assert pl.mean_center_distance([10.0, 55.0], [0.0, 50.0, 100.0]) == pytest.approx(7.5)


def test_shock_plan_tiles_signal():
    plan = pl.shock_plan(length=1024, n_frames=8)
    np.testing.assert_allclose(resolve_positions(plan), 64 + 128 * np.arange(8))


def test_hop_fit_short_run():
    syn = pl.shock_scenario(0, length=2048)
    out = pl.fit_hops(syn, pl.shock_plan(length=2048, n_frames=16), cfg=replace(pl.HOP_FIT, max_iters=5))
    assert out.result.iterations_used == 5
    assert out.distance[0] > 0 and out.coverage[0] > 0


def test_tracking_task_small():
    out = pl.tracking_task(size=2, length=1024, support=128, hop=64.0, sweep=(20, 120, 20), theta0=60.0,
                           cfg=replace(pl.TRACK_FIT, max_iters=3))
    assert out.sweep.shape == (6, 2)
    assert out.evaluate(out.theta) == pytest.approx(out.result.loss_trace[-1], rel=0.5)


def test_classify_run_records_history():
    data = pl.classification_data(size=20, length=128)
    run = pl.classify_run(data, 32.0, True, cfg=replace(pl.CLASSIFY_FIT, max_iters=3), record=True)
    assert [h["epoch"] for h in run.history] == [0, 1, 2]
    assert {"train_loss", "val_acc", "test_loss"} <= set(run.history[0])
    assert run.history[0]["train_loss"] == pytest.approx(np.log(2))
    fixed = pl.classify_run(data, 32.0, False, cfg=replace(pl.CLASSIFY_FIT, max_iters=3))
    assert fixed.theta == 32.0
