import json

import numpy as np
import pytest

from socialact.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from socialact.config import ConfigError, RunConfig, load_config
from socialact.plotting import group_size_table

SMOKE = {"seed": 3, "synth": {"n_scenes": 12, "P": 3, "D": 8, "D_g": 8},
         "model": {"E": 8, "H": 2}, "train": {"stage1_epochs": 1, "stage2_epochs": 2}}


@pytest.fixture()
def smoke_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMOKE))
    return str(path)


@pytest.fixture()
def trained(tmp_path, smoke_config):
    data, run = tmp_path / "data", tmp_path / "run"
    assert main(["synth", "--config", smoke_config, "--out", str(data)]) == EXIT_OK
    assert main(["train", "--config", smoke_config, "--data", str(data), "--out", str(run)]) == EXIT_OK
    return data, run


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.synth_config().n_scenes == 250
        assert cfg.modes == ("group", "individuals", "cluster", "learn2cluster")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            RunConfig.from_dict({"train": {"bogus": 1}})

    def test_flags_win(self):
        cfg = RunConfig.from_dict({"loss": {"lambda1": 1.0}, "train": {"stage1_epochs": 10, "stage2_epochs": 30}})
        cfg = cfg.with_overrides(seed=9, epochs=8, lambda1=3.0, lambda2=0.5)
        assert cfg.seed == 9 and cfg.loss == {"lambda1": 3.0, "lambda2": 0.5}
        assert (cfg.train["stage1_epochs"], cfg.train["stage2_epochs"]) == (2, 6)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_shipped_configs_load(self):
        from pathlib import Path

        for p in sorted((Path(__file__).parent.parent / "configs").glob("*.json")):
            load_config(p).synth_config()


class TestCommands:
    def test_pipeline(self, tmp_path, trained, smoke_config, capsys):
        data, run = trained
        assert (data / "annotations.jsonl").exists()
        assert (run / "model.ckpt").exists()
        assert (run / "train_log.csv").read_text().startswith("epoch,stage,lr,loss")
        ev = tmp_path / "ev"
        assert main(["eval", "--data", str(data), "--checkpoint", str(run / "model.ckpt"), "--out", str(ev)]) == EXIT_OK
        rep = json.loads((ev / "report_learn2cluster.json").read_text())
        assert 0.0 <= rep["membership_acc"] <= 1.0
        assert (ev / "report.csv").read_text().count("\n") == 1 + 4 * 4
        inf = tmp_path / "inf"
        assert main(["infer", "--data", str(data), "--checkpoint", str(run / "model.ckpt"), "--out", str(inf)]) == EXIT_OK
        recs = [json.loads(line) for line in (inf / "predictions.jsonl").read_text().splitlines()]
        assert all(sorted(m for g in r["groups"] for m in g["members"]) == list(range(len(r["actions"])))
                   for r in recs)
        plots = tmp_path / "plots"
        assert main(["plot", "--data", str(data), "--log", str(run / "train_log.csv"),
                     "--report", str(ev / "report_group.json"), "--out", str(plots)]) == EXIT_OK
        for stem in ("group_sizes", "loss_curves", "metrics"):
            assert (plots / f"{stem}.svg").read_text().lstrip().startswith("<?xml")
            assert (plots / f"{stem}.csv").exists()

    def test_idempotent(self, tmp_path, smoke_config):
        outs = []
        for name in ("a", "b"):
            d, r = tmp_path / name / "data", tmp_path / name / "run"
            main(["synth", "--config", smoke_config, "--out", str(d)])
            main(["train", "--config", smoke_config, "--data", str(d), "--out", str(r)])
            main(["plot", "--data", str(d), "--log", str(r / "train_log.csv"), "--out", str(r)])
            outs.append([(r / f).read_bytes() for f in ("model.ckpt", "train_log.csv", "group_sizes.svg")]
                        + [(d / "annotations.jsonl").read_bytes()])
        assert outs[0] == outs[1]

    def test_unknown_mode_is_usage_error(self, trained, tmp_path, capsys):
        data, run = trained
        rc = main(["eval", "--data", str(data), "--checkpoint", str(run / "model.ckpt"), "--mode", "crowd",
                   "--out", str(tmp_path / "e")])
        assert rc == EXIT_USAGE
        assert "unknown mode" in capsys.readouterr().err

    def test_usage_errors(self, capsys):
        assert main([]) == EXIT_USAGE
        assert main(["dance"]) == EXIT_USAGE
        assert main(["train", "--epochs", "x"]) == EXIT_USAGE
        assert main(["train"]) == EXIT_USAGE

    def test_data_errors(self, tmp_path, trained, capsys):
        data, run = trained
        assert main(["eval", "--data", str(tmp_path / "missing"), "--checkpoint", str(run / "model.ckpt"),
                     "--out", str(tmp_path)]) == EXIT_DATA
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        assert main(["eval", "--data", str(data), "--checkpoint", str(bad), "--out", str(tmp_path)]) == EXIT_DATA
        (data / "annotations.jsonl").write_text("{broken\n")
        assert main(["train", "--data", str(data), "--out", str(tmp_path)]) == EXIT_DATA
        assert "line 1" in capsys.readouterr().err

    def test_numerical_failure(self, tmp_path, trained, monkeypatch, capsys):
        import socialact.cli as cli

        data, _ = trained

        def boom(*a, **k):
            raise FloatingPointError("non-finite gradient for parameter sa.Wq")

        monkeypatch.setattr(cli, "train", boom)
        assert main(["train", "--data", str(data), "--out", str(tmp_path)]) == EXIT_NUMERIC
        assert "numerical" in capsys.readouterr().err

    def test_gradcheck_passes(self, capsys):
        assert main(["gradcheck", "--seed", "1"]) == EXIT_OK
        assert "worst" in capsys.readouterr().out


class TestPlotTables:
    def test_group_size_table(self, labels):
        from conftest import make_scene

        scenes = [make_scene([[0, 1], [2]], [1, 1, 2]), make_scene([[0, 1]], [3, 3])]
        sizes, table = group_size_table(scenes, labels)
        assert sizes == [1, 2]
        np.testing.assert_array_equal(table.sum(axis=1), [1, 2])
        assert table[1, 1] == 1 and table[1, 3] == 1
