import json

import numpy as np
import pytest

from dstft import cli
from dstft.optimize import DivergenceError
from dstft.signals import read_csv_matrix, save
from dstft.transform import PositionField, Signal, classical_stft, forward, make_plan


@pytest.fixture
def tone_csv(tmp_path):
    x = np.cos(2 * np.pi * 0.1 * np.arange(1024)) + 0.01 * np.random.default_rng(1).standard_normal(1024)
    path = tmp_path / "x.csv"
    save(Signal(x), path, "csv")
    return path, x


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestImages:
    def test_db_mapping(self):
        mag = np.array([[1.0, 0.1], [1e-3, 0.0], [1e-5, 1.0]])
        img = cli.db_image(mag, 80.0)
        # rows flipped: the last input row (highest bin) comes first
        np.testing.assert_array_equal(img, [[0, 255], [64, 0], [255, 191]])

    def test_all_zero(self):
        assert np.all(cli.db_image(np.zeros((3, 3))) == 0)

    def test_pgm_header(self):
        data = cli.pgm_bytes(np.zeros((2, 3), np.uint8))
        assert data == b"P5\n3 2\n255\n" + bytes(6)
        with pytest.raises(ValueError):
            cli.pgm_bytes(np.zeros((2, 3)))

    def test_linear(self):
        np.testing.assert_array_equal(cli.linear_image(np.array([[2.0, 66.0]]), 2, 130), [[0, 128]])

    def test_frame_count(self):
        assert cli._n_frames(1024, 64) == 17
        assert cli._n_frames(1024, 64, 10) == 16


class TestSpectrogram:
    def test_outputs(self, tmp_path, tone_csv):
        path, x = tone_csv
        out = tmp_path / "s"
        assert run("spectrogram", "--input", path, "--support", 128, "--hop", 32, "--out", out) == 0
        stft = read_csv_matrix(f"{out}.stft.csv")
        mag = read_csv_matrix(f"{out}.mag.csv")
        assert stft.shape == (65, 2 * 33) and mag.shape == (65, 33)
        S = stft[:, 0::2] + 1j * stft[:, 1::2]
        ref = classical_stft(Signal(x), 128, 32)
        np.testing.assert_allclose(S, ref.values, atol=1e-12)
        np.testing.assert_allclose(mag, np.abs(S), atol=1e-15)
        pgm = (tmp_path / "s.pgm").read_bytes()
        assert pgm.startswith(b"P5\n33 65\n255\n") and len(pgm) == len(b"P5\n33 65\n255\n") + 65 * 33
        meta = json.loads((tmp_path / "s.meta.json").read_text())
        assert meta["plan"]["support"] == 128

    def test_pure_tone_is_one_line(self, tmp_path):
        x = np.cos(2 * np.pi * (16 / 64) * np.arange(1024))
        save(Signal(x), tmp_path / "t.csv", "csv")
        assert run("spectrogram", "--input", tmp_path / "t.csv", "--support", 64, "--hop", 16,
                   "--t0", 32, "--out", tmp_path / "t") == 0
        mag = read_csv_matrix(tmp_path / "t.mag.csv")
        assert np.all(np.argmax(mag[:, 1:-1], axis=0) == 16)
        raw = (tmp_path / "t.pgm").read_bytes()
        header = b"P5\n%d 33\n255\n" % mag.shape[1]
        img = np.frombuffer(raw[len(header):], np.uint8).reshape(33, -1)
        # brightest row of every interior column is bin 16, counted from the top row = bin 32
        assert np.all(np.argmax(img[:, 1:-1], axis=0) == 32 - 16)

    def test_theta_and_window(self, tmp_path, tone_csv):
        path, x = tone_csv
        out = tmp_path / "g"
        assert run("spectrogram", "--input", path, "--support", 64, "--theta", 40.5, "--hop", 50,
                   "--t0", 7.5, "--window", "gauss", "--out", out) == 0
        plan = make_plan(64, 40.5, PositionField.uniform_hop(7.5, 50.0), 1 + (1024 - 7) // 50, "gauss")
        np.testing.assert_allclose(read_csv_matrix(f"{out}.mag.csv"), np.abs(forward(plan, Signal(x)).values),
                                   atol=1e-12)


class TestExitCodes:
    def test_missing_file(self, tmp_path):
        assert run("spectrogram", "--input", tmp_path / "nope.csv", "--out", tmp_path / "o") == 3

    def test_bad_csv(self, tmp_path, capsys):
        (tmp_path / "b.csv").write_text("1\n2\nx\n")
        assert run("spectrogram", "--input", tmp_path / "b.csv", "--out", tmp_path / "o") == 3
        assert "byte 4" in capsys.readouterr().err

    def test_bad_flags(self, tmp_path):
        with pytest.raises(SystemExit) as e:
            run("spectrogram", "--support", "abc")
        assert e.value.code == 2

    def test_domain(self, tmp_path, tone_csv):
        path, _ = tone_csv
        assert run("spectrogram", "--input", path, "--support", 63, "--out", tmp_path / "o") == 2
        assert run("spectrogram", "--input", path, "--support", 64, "--theta", 100, "--out", tmp_path / "o") == 2

    def test_lambda_needs_regularizer(self, tmp_path, tone_csv):
        path, _ = tone_csv
        assert run("optimize", "--input", path, "--objective", "entropy", "--lambda", 0.1,
                   "--out", tmp_path / "o") == 2
        assert run("optimize", "--input", path, "--mode", "const", "--objective", "entropy+nltv",
                   "--out", tmp_path / "o") == 2

    def test_divergence(self, tmp_path, tone_csv, monkeypatch):
        def boom(*a, **k):
            raise DivergenceError("loss became nan")
        monkeypatch.setattr(cli, "fit", boom)
        path, _ = tone_csv
        assert run("optimize", "--input", path, "--mode", "const", "--out", tmp_path / "o") == 5

    def test_numeric(self, tmp_path, tone_csv, monkeypatch):
        def nan_forward(plan, sig):
            tf = forward(plan, sig)
            tf.values[0, 0] = np.nan
            return tf
        monkeypatch.setattr(cli, "forward", nan_forward)
        path, _ = tone_csv
        assert run("spectrogram", "--input", path, "--support", 64, "--out", tmp_path / "o") == 4


class TestOptimize:
    def test_const_from_file(self, tmp_path, tone_csv):
        path, _ = tone_csv
        out = tmp_path / "c"
        assert run("optimize", "--input", path, "--mode", "const", "--support", 128, "--hop", 32,
                   "--max-iters", 5, "--out", out) == 0
        params = json.loads((tmp_path / "c.params.json").read_text())
        assert params["objective"] == "entropy" and params["iterations"] == 5
        trace = read_csv_matrix_skip_header(tmp_path / "c.trace.csv")
        assert trace.shape == (5, 3)
        assert (tmp_path / "c.pgm").exists() and (tmp_path / "c.mag.csv").exists()

    def test_tf_writes_theta_map(self, tmp_path):
        out = tmp_path / "t"
        assert run("optimize", "--scenario", "three-component", "--length", 512, "--mode", "tf",
                   "--init", "value", "--support", 64, "--hop", 32, "--max-iters", 2, "--out", out) == 0
        th = read_csv_matrix(f"{out}.thetamap.csv")
        assert th.shape == (33, 17)
        assert (tmp_path / "t.thetamap.pgm").read_bytes().startswith(b"P5\n17 33\n255\n")
        assert json.loads((tmp_path / "t.params.json").read_text())["objective"] == "entropy+nltv"

    def test_hop_mode(self, tmp_path):
        out = tmp_path / "h"
        assert run("optimize", "--scenario", "shock-train", "--length", 2048, "--mode", "hop",
                   "--frames", 16, "--max-iters", 3, "--out", out) == 0
        params = json.loads((tmp_path / "h.params.json").read_text())
        assert params["objective"] == "kurtosis+coverage"

    def test_deterministic(self, tmp_path, tone_csv):
        path, _ = tone_csv
        for name in ("a", "b"):
            assert run("optimize", "--input", path, "--mode", "const", "--support", 128, "--hop", 32,
                       "--max-iters", 4, "--out", tmp_path / name) == 0
        for ext in ("trace.csv", "params.json", "mag.csv", "pgm"):
            assert (tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()


def read_csv_matrix_skip_header(path):
    lines = path.read_text().splitlines()[1:]
    return np.array([[float(v) for v in ln.split(",")] for ln in lines])


class TestChecks:
    def test_gradcheck(self, tmp_path, capsys):
        assert run("gradcheck", "--mode", "const", "--window", "gauss", "--out", tmp_path / "g") == 0
        assert "PASS" in capsys.readouterr().err
        text = (tmp_path / "g.gradcheck.csv").read_text()
        assert text.startswith("seed,window,length_mode")

    def test_gradcheck_failure_exit(self, tmp_path):
        assert run("gradcheck", "--mode", "const", "--window", "gauss", "--tol", 1e-30,
                   "--out", tmp_path / "g") == 1

    def test_bench(self, tmp_path):
        assert run("bench", "--sizes", "16,32", "--frames", 4, "--modes", "time", "--repeats", 1,
                   "--out", tmp_path / "b") == 0
        assert len((tmp_path / "b.bench.csv").read_text().splitlines()) == 3
        assert run("bench", "--sizes", "32,16", "--out", tmp_path / "b") == 2

    def test_taskfit_track_small(self, tmp_path):
        out = tmp_path / "k"
        assert run("taskfit", "--task", "track", "--dataset-size", 2, "--sweep", "40:200:40",
                   "--out", out) == 0
        summary = json.loads((tmp_path / "k.optima.json").read_text())
        assert summary["sweep_argmin"] in (40.0, 80.0, 120.0, 160.0, 200.0)
        assert run("taskfit", "--task", "track", "--sweep", "1:2", "--out", out) == 2
