"""Command-line workflow: config parsing, dataset/model files, and the
synth / train / predict / bench commands end to end on small problems.
"""

import json

import numpy as np
import pytest

from gsmgp import gp
from gsmgp.cli import (
    load_model,
    main,
    make_config,
    parse_config_file,
    read_dataset,
    save_model,
    write_dataset,
)
from gsmgp.errors import ConfigError, DataFormatError
from gsmgp.kernel import Dataset, build_grid, build_workspace
from gsmgp.synth import sparse_1d


class TestConfigParsing:
    def test_file_values_comments_and_blanks(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# weight learning\n"
            "algorithm = dsca\n"
            "\n"
            "Q = 40   # candidates\n"
            "step_tol = 1e-4\n"
        )
        vals = parse_config_file(cfg)
        assert vals == {"algorithm": "dsca", "Q": "40", "step_tol": "1e-4"}

    def test_file_errors_carry_line_numbers(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("algorithm = sca\njust words\n")
        with pytest.raises(ConfigError, match=":2"):
            parse_config_file(bad)
        bad.write_text("palgorithm = sca\n")
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_file(bad)
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config_file(tmp_path / "missing.cfg")

    def test_overrides_beat_file_values(self):
        cfg = make_config({"Q": "10", "s": "2"}, {"Q": 25})
        assert cfg.Q == 25
        assert cfg.s == 2
        assert cfg.algorithm == "sca"  # default survives

    def test_type_coercion_and_failures(self):
        cfg = make_config({"step_tol": "1e-3", "max_iter": "7"})
        assert cfg.step_tol == 1e-3 and cfg.max_iter == 7
        with pytest.raises(ConfigError, match="cannot parse"):
            make_config({"Q": "forty"})

    def test_cross_field_requirements(self):
        with pytest.raises(ConfigError, match="algorithm"):
            make_config({"algorithm": "newton"})
        with pytest.raises(ConfigError, match="needs N"):
            make_config({"algorithm": "d2sca"})
        with pytest.raises(ConfigError, match="delta"):
            make_config({"algorithm": "qd2sca", "N": "2"})
        with pytest.raises(ConfigError, match="sigma2"):
            make_config({"sigma2": "-1"})
        with pytest.raises(ConfigError, match=">= 1"):
            make_config({"max_iter": "0"})


class TestDatasetFiles:
    def test_write_read_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        data = Dataset(X=rng.normal(size=(17, 2)), y=rng.normal(size=17))
        path = tmp_path / "d.csv"
        write_dataset(path, data)
        back = read_dataset(path)
        np.testing.assert_array_equal(back.X, data.X)
        np.testing.assert_array_equal(back.y, data.y)

    def test_header_must_name_features_then_y(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x1,x2,target\n0,0,1\n")
        with pytest.raises(DataFormatError, match="header"):
            read_dataset(p)
        p.write_text("a,b,y\n0,0,1\n")
        with pytest.raises(DataFormatError, match="x1"):
            read_dataset(p)

    def test_row_validation(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x1,y\n1.0\n")
        with pytest.raises(DataFormatError, match="columns"):
            read_dataset(p)
        p.write_text("x1,y\n1.0,apple\n")
        with pytest.raises(DataFormatError, match="non-numeric"):
            read_dataset(p)
        p.write_text("x1,y\n1.0,nan\n")
        with pytest.raises(DataFormatError, match="non-finite"):
            read_dataset(p)
        p.write_text("x1,y\n")
        with pytest.raises(DataFormatError, match="no data rows"):
            read_dataset(p)
        p.write_text("")
        with pytest.raises(DataFormatError, match="empty"):
            read_dataset(p)


class TestModelFiles:
    def test_round_trip_preserves_predictions(self, tmp_path):
        train, test, meta = sparse_1d(20, seed=5, Q=5, active=(1, 3))
        grid = build_grid(
            train, Q=5, sampling="uniform", v_const=meta["grid_variance"]
        )
        ws = build_workspace(train, grid, noise_var=0.05)
        weights = np.array([0.0, 1.3, 0.0, 0.4, 0.02])
        model = gp.GPModel(
            grid=grid, weights=weights, noise_var=0.05, train=train,
            workspace=ws,
        )
        path = tmp_path / "model.json"
        save_model(path, model)
        loaded = load_model(path)
        np.testing.assert_array_equal(loaded.weights, weights)
        np.testing.assert_array_equal(loaded.grid.mu, grid.mu)
        a = gp.predict(model, test.X)
        b = gp.predict(loaded, test.X)
        np.testing.assert_allclose(b.mean, a.mean, rtol=1e-9, atol=1e-12)

    def test_malformed_model_files(self, tmp_path):
        p = tmp_path / "m.json"
        with pytest.raises(DataFormatError, match="cannot load"):
            load_model(p)
        p.write_text("{not json")
        with pytest.raises(DataFormatError, match="cannot load"):
            load_model(p)
        p.write_text(json.dumps({"weights": [1.0]}))
        with pytest.raises(DataFormatError, match="missing field"):
            load_model(p)


@pytest.fixture(scope="class")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    rc = main(
        ["synth", "--kind", "sparse_1d", "--n", "40", "--seed", "1",
         "--test-n", "20", "--out", str(out)]
    )
    assert rc == 0
    return out


class TestCommands:
    def test_synth_outputs_and_determinism(self, synth_dir, tmp_path):
        again = tmp_path / "again"
        rc = main(
            ["synth", "--kind", "sparse_1d", "--n", "40", "--seed", "1",
             "--test-n", "20", "--out", str(again)]
        )
        assert rc == 0
        for name in ("train.csv", "test.csv", "truth.json"):
            assert (synth_dir / name).read_text() == (again / name).read_text()
        truth = json.loads((synth_dir / "truth.json").read_text())
        assert truth["kind"] == "sparse_1d"
        assert read_dataset(synth_dir / "train.csv").n == 40

    def test_train_then_predict(self, synth_dir, tmp_path, capsys):
        run = tmp_path / "run"
        rc = main(
            ["train", "--algorithm", "sca",
             "--train", str(synth_dir / "train.csv"),
             "--Q", "8", "--max_iter", "30", "--out", str(run)]
        )
        assert rc in (0, 3)
        summary = json.loads((run / "run.json").read_text())
        assert summary["converged"] == (rc == 0)
        assert summary["algorithm"] == "sca"
        assert np.isfinite(summary["final_nll"])
        trace_lines = (run / "trace.csv").read_text().strip().splitlines()
        assert trace_lines[0].startswith("iteration,nll")
        assert len(trace_lines) >= 2

        pred = tmp_path / "pred.csv"
        rc = main(
            ["predict", "--model", str(run / "model.json"),
             "--data", str(synth_dir / "test.csv"), "--out", str(pred)]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "mse" in out
        lines = pred.read_text().strip().splitlines()
        assert lines[0] == "x1,mean,var"
        assert len(lines) == 21
        body = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]])
        assert np.all(body[:, 2] > 0)  # predictive variances
        # the fit explains the held-out signal far better than predicting 0
        test = read_dataset(synth_dir / "test.csv")
        assert gp.mse(body[:, 1], test.y) < 0.5 * float(np.mean(test.y**2))

    def test_config_file_run_with_consensus_outputs(
        self, synth_dir, tmp_path
    ):
        run = tmp_path / "run"
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "algorithm = d2sca\n"
            f"train = {synth_dir / 'train.csv'}\n"
            "Q = 6\nN = 2\ns = 2\nmax_outer = 3\n"
            f"out = {run}\n"
        )
        rc = main(["train", "--config", str(cfg)])
        assert rc == 3  # three rounds cannot satisfy the stopping rule
        links = (run / "links.csv").read_text().strip().splitlines()
        assert links[0] == "sender,receiver,round,payload_bits,total_bits"
        # 2 agents x 3 rounds in both directions
        assert len(links) == 1 + 12
        summary = json.loads((run / "run.json").read_text())
        assert summary["uplink_payload_bits"] == 2 * 3 * 6 * 64

    def test_bench_tabulates_multiple_configs(self, synth_dir, tmp_path, capsys):
        cfg_a = tmp_path / "a.cfg"
        cfg_a.write_text(
            "algorithm = sca\n"
            f"train = {synth_dir / 'train.csv'}\n"
            f"test = {synth_dir / 'test.csv'}\n"
            "Q = 6\nmax_iter = 8\n"
            f"out = {tmp_path / 'out_a'}\n"
        )
        cfg_b = tmp_path / "b.cfg"
        cfg_b.write_text(
            "algorithm = d2sca\n"
            f"train = {synth_dir / 'train.csv'}\n"
            "Q = 6\nN = 2\nmax_outer = 2\n"
            f"out = {tmp_path / 'out_b'}\n"
        )
        table = tmp_path / "bench.csv"
        rc = main(["bench", "--table", str(table), str(cfg_a), str(cfg_b)])
        assert rc == 3
        lines = table.read_text().strip().splitlines()
        assert len(lines) == 3
        header = lines[0].split(",")
        assert {"name", "algorithm", "final_nll", "uplink_bits", "mse"} <= set(header)
        row_a = dict(zip(header, lines[1].split(",")))
        assert row_a["name"] == "a"
        assert row_a["mse"] != ""  # test set given, so the column is filled
        out = capsys.readouterr().out
        assert "final_nll" in out and "a" in out and "b" in out

    def test_exit_codes_for_bad_input(self, synth_dir, tmp_path, capsys):
        assert main(["train", "--algorithm", "newton"]) == 1
        assert main(["train", "--algorithm", "sca"]) == 1  # no train data
        assert (
            main(["predict", "--model", str(tmp_path / "no.json"),
                  "--data", str(synth_dir / "test.csv"),
                  "--out", str(tmp_path / "p.csv")])
            == 2
        )
        broken = tmp_path / "broken.csv"
        broken.write_text("x1,y\n1.0,oops\n")
        assert (
            main(["train", "--algorithm", "sca", "--train", str(broken)]) == 2
        )
        err = capsys.readouterr().err
        assert "error" in err
