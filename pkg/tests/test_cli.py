"""End-to-end tests of the command-line interface (run in process)."""

import numpy as np
import pytest

from conftest import piecewise_image, random_regression
from nash.ash import AshPrior
from nash.cli import main
from nash.data import Dataset, SideInfo
from nash.engine import FitConfig, fit
from nash.pgm import read_pgm, write_pgm


def write_csv(path, matrix):
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.atleast_2d(matrix):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


@pytest.fixture
def regression_files(tmp_path):
    X, y, _ = random_regression(17, n=30, p=5)
    x_path = tmp_path / "x.csv"
    y_path = tmp_path / "y.csv"
    write_csv(x_path, X)
    write_csv(y_path, y[:, None])
    return X, y, str(x_path), str(y_path)


class TestFitCommand:
    def test_smoke_fit(self, regression_files, tmp_path, capsys):
        _, _, x_path, y_path = regression_files
        out = tmp_path / "model.json"
        code = main(["fit", "--x", x_path, "--y", y_path, "--out", str(out), "--seed", "1"])
        assert code == 0
        assert out.exists()
        stdout = capsys.readouterr().out
        assert "final_elbo=" in stdout and "pi0=" in stdout and "sweeps=" in stdout

    def test_identical_seeds_byte_identical_models(self, regression_files, tmp_path):
        _, _, x_path, y_path = regression_files
        files = []
        for run in range(2):
            out = tmp_path / f"model{run}.json"
            assert main(["fit", "--x", x_path, "--y", y_path, "--out", str(out), "--seed", "9"]) == 0
            files.append(out.read_bytes())
        assert files[0] == files[1]

    def test_softmax_requires_side_info(self, regression_files, tmp_path, capsys):
        _, _, x_path, y_path = regression_files
        code = main(["fit", "--x", x_path, "--y", y_path, "--prior", "softmax",
                     "--out", str(tmp_path / "m.json")])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and "side information" in err

    def test_softmax_with_side_csv(self, regression_files, tmp_path):
        _, _, x_path, y_path = regression_files
        side = tmp_path / "side.csv"
        side.write_text("a\na\nb\nb\nb\n")
        code = main(["fit", "--x", x_path, "--y", y_path, "--prior", "softmax",
                     "--side", str(side), "--steps", "30", "--later-steps", "10",
                     "--out", str(tmp_path / "m.json")])
        assert code == 0

    def test_fused_with_chain_graph(self, regression_files, tmp_path):
        _, _, x_path, y_path = regression_files
        code = main(["fit", "--x", x_path, "--y", y_path, "--prior", "fused",
                     "--side", "chain", "--max-sweeps", "10",
                     "--out", str(tmp_path / "m.json")])
        assert code == 0

    def test_constant_column_fails_without_flag(self, tmp_path, capsys):
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        y = np.arange(10.0)
        write_csv(tmp_path / "x.csv", X)
        write_csv(tmp_path / "y.csv", y[:, None])
        code = main(["fit", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"),
                     "--out", str(tmp_path / "m.json")])
        assert code == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_drop_constant_flag(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        X = np.column_stack([np.full(20, 3.0), rng.standard_normal((20, 3))])
        y = X[:, 1] * 2.0 + 0.1 * rng.standard_normal(20)
        write_csv(tmp_path / "x.csv", X)
        write_csv(tmp_path / "y.csv", y[:, None])
        model = tmp_path / "m.json"
        code = main(["fit", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"),
                     "--drop-constant", "--out", str(model)])
        assert code == 0
        assert "dropped 1 constant" in capsys.readouterr().err
        # prediction still accepts the original four-column layout
        write_csv(tmp_path / "new.csv", X[:3])
        assert main(["predict", "--model", str(model), "--x", str(tmp_path / "new.csv"),
                     "--out", str(tmp_path / "p.csv")]) == 0


class TestPredictCommand:
    def test_training_rows_match_fitted_values(self, regression_files, tmp_path):
        X, y, x_path, y_path = regression_files
        model = tmp_path / "m.json"
        assert main(["fit", "--x", x_path, "--y", y_path, "--out", str(model), "--seed", "4"]) == 0
        pred_path = tmp_path / "pred.csv"
        assert main(["predict", "--model", str(model), "--x", x_path, "--out", str(pred_path)]) == 0
        predictions = np.array([float(line) for line in pred_path.read_text().splitlines()])
        reference = fit(Dataset(y=y, X=X), SideInfo.none(), AshPrior(n_components=20),
                        FitConfig(seed=4))
        np.testing.assert_allclose(predictions, reference.fitted_values, atol=1e-10)

    def test_empty_input_rejected(self, regression_files, tmp_path, capsys):
        _, _, x_path, y_path = regression_files
        model = tmp_path / "m.json"
        main(["fit", "--x", x_path, "--y", y_path, "--out", str(model)])
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        assert main(["predict", "--model", str(model), "--x", str(empty),
                     "--out", str(tmp_path / "p.csv")]) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_header_only_gives_zero_rows(self, regression_files, tmp_path):
        _, _, x_path, y_path = regression_files
        model = tmp_path / "m.json"
        main(["fit", "--x", x_path, "--y", y_path, "--out", str(model)])
        header_only = tmp_path / "h.csv"
        header_only.write_text("a,b,c,d,e\n")
        out = tmp_path / "p.csv"
        assert main(["predict", "--model", str(model), "--x", str(header_only),
                     "--out", str(out)]) == 0
        assert out.read_text() == ""

    def test_dimension_mismatch_rejected(self, regression_files, tmp_path):
        _, _, x_path, y_path = regression_files
        model = tmp_path / "m.json"
        main(["fit", "--x", x_path, "--y", y_path, "--out", str(model)])
        write_csv(tmp_path / "wide.csv", np.zeros((2, 9)))
        assert main(["predict", "--model", str(model), "--x", str(tmp_path / "wide.csv"),
                     "--out", str(tmp_path / "p.csv")]) == 2


class TestSimulateCommand:
    def test_row_count_and_determinism(self, tmp_path):
        args = ["simulate", "--experiment", "3", "--replicates", "1", "--n", "30",
                "--p", "5", "--seed", "2"]
        outputs = []
        for run in range(2):
            out = tmp_path / f"r{run}.csv"
            assert main(args + ["--out", str(out)]) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
        lines = outputs[0].decode().splitlines()
        assert len(lines) == 1 + 6  # header + six signal fractions x one replicate

    def test_unknown_experiment_rejected(self, tmp_path, capsys):
        assert main(["simulate", "--experiment", "9", "--out", str(tmp_path / "r.csv")]) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_benchmark_alias(self, tmp_path):
        out = tmp_path / "r.csv"
        assert main(["benchmark", "--experiment", "3", "--replicates", "1", "--n", "30",
                     "--p", "5", "--out", str(out)]) == 0
        assert out.exists()


class TestDenoiseCommand:
    def test_constant_image_unchanged(self, tmp_path):
        image = np.full((10, 12), 0.5)
        src = tmp_path / "in.pgm"
        write_pgm(str(src), image)
        out = tmp_path / "out.pgm"
        assert main(["denoise", "--image", str(src), "--out", str(out)]) == 0
        np.testing.assert_allclose(read_pgm(str(out)), image, atol=1.0 / 255)

    def test_reports_rmse_improvement(self, tmp_path, capsys):
        image = piecewise_image(2)
        noisy = np.clip(image + np.random.default_rng(2).normal(0, 0.2, image.shape), 0, 1)
        src = tmp_path / "noisy.pgm"
        truth = tmp_path / "clean.pgm"
        write_pgm(str(src), noisy)
        write_pgm(str(truth), image)
        out = tmp_path / "out.pgm"
        code = main(["denoise", "--image", str(src), "--out", str(out),
                     "--truth", str(truth), "--sigma", "0.2"])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "rmse_noisy=" in stdout and "rmse_denoised=" in stdout
        values = dict(part.split("=") for part in stdout.split())
        assert float(values["rmse_denoised"]) < float(values["rmse_noisy"])

    def test_non_pgm_rejected(self, tmp_path, capsys):
        bad = tmp_path / "img.pgm"
        bad.write_text("not an image")
        assert main(["denoise", "--image", str(bad), "--out", str(tmp_path / "o.pgm")]) == 2
        assert capsys.readouterr().err.startswith("error:")


class TestUsage:
    @pytest.mark.parametrize("command", ["fit", "predict", "simulate", "benchmark", "denoise"])
    def test_help_exits_zero(self, command, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main([command, "--help"])
        assert excinfo.value.code == 0
        capsys.readouterr()

    def test_missing_required_argument_is_single_line_error(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["fit", "--x", "x.csv"])
        assert excinfo.value.code == 2
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert len(err.strip().splitlines()) == 1


class TestThreads:
    def test_env_fallback_for_thread_count(self, monkeypatch):
        from nash.cli import _thread_count
        monkeypatch.setenv("NASH_THREADS", "3")
        assert _thread_count(None) == 3
        assert _thread_count(2) == 2
        monkeypatch.delenv("NASH_THREADS")
        assert _thread_count(None) >= 1


class TestTimedSmoke:
    def test_small_experiment_completes_quickly(self, tmp_path):
        import time
        out = tmp_path / "r.csv"
        started = time.monotonic()
        assert main(["simulate", "--experiment", "3", "--replicates", "2",
                     "--p", "100", "--out", str(out), "--seed", "0"]) == 0
        elapsed = time.monotonic() - started
        assert elapsed < 60.0
        assert len(out.read_text().splitlines()) == 1 + 6 * 2
