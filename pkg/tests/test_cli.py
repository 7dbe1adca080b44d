import json
import subprocess
import sys
from pathlib import Path

import pytest

from newsgru.cli import main
from newsgru.corpus import synth_generate
from newsgru.model import ModelConfig, init_params
from newsgru.numerics import Rng
from newsgru.train import Checkpoint, save_checkpoint


def make_corpus(tmp_path, seed=1, n_days=60, signal=1.0, **overrides):
    data_dir = tmp_path / "data"
    result = synth_generate(Rng(seed), n_days, signal, data_dir)
    cfg = {
        "news": str(result.news_path),
        "prices": str(result.prices_path),
        "embeddings": str(result.embeddings_path),
        "entity_graph": str(result.graph_path),
        "output_dir": str(tmp_path / "out"),
        "d_day": 3,
        "d_h": 8,
        "epochs": 2,
        "seed": seed,
        "train_frac": 0.6,
        "val_frac": 0.2,
    }
    cfg.update(overrides)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    return cfg_path, cfg, result


class TestPrepare:
    def test_stats_show_all_splits(self, tmp_path, capsys):
        cfg_path, cfg, _ = make_corpus(tmp_path)
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "train=" in out and "val=" in out and "test=" in out
        for part in out.split("splits: ")[1].split()[:3]:
            assert int(part.split("=")[1]) > 0
        manifest = Path(cfg["output_dir"]) / "windows.jsonl"
        rows = [json.loads(line) for line in manifest.read_text().splitlines()]
        assert {r["split"] for r in rows} == {"train", "val", "test"}
        assert all(len(r["days"]) == 7 for r in rows)

    def test_empty_news_still_builds_windows(self, tmp_path, capsys):
        cfg_path, cfg, _ = make_corpus(tmp_path)
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        cfg["news"] = str(empty)
        cfg_path.write_text(json.dumps(cfg))
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "news: 0 kept of 0" in out
        assert "windows:" in out

    def test_google_fixture_keeps_youtube_headline(self, tmp_path, capsys):
        from newsgru.corpus import bundled_entity_graph_path

        news = tmp_path / "news.jsonl"
        lines = [
            {"date": "2020-01-06", "headline": "Premier League soccer sues YouTube over copyright."},
            {"date": "2020-01-06", "headline": "Rain expected across the plains."},
        ]
        news.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
        prices = tmp_path / "prices.csv"
        rows = ["date,open,high,low,close,volume"]
        from datetime import date, timedelta
        d = date(2020, 1, 6)
        for i in range(12):
            rows.append(f"{d.isoformat()},10,11,9,10.5,100")
            d += timedelta(days=1)
        prices.write_text("\n".join(rows) + "\n")
        cfg = {
            "news": str(news),
            "prices": str(prices),
            "entity_graph": str(bundled_entity_graph_path()),
            "output_dir": str(tmp_path / "out"),
            "train_frac": 0.5,
            "val_frac": 0.25,
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        assert "news: 1 kept of 2" in capsys.readouterr().out

    def test_missing_path_is_input_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({"output_dir": str(tmp_path / "out")}))
        assert main(["prepare", "--config", str(cfg_path)]) == 1
        assert "missing required paths" in capsys.readouterr().err


class TestTrainEval:
    def test_train_writes_checkpoint_and_metrics(self, tmp_path, capsys):
        cfg_path, cfg, _ = make_corpus(tmp_path)
        assert main(["train", "--config", str(cfg_path)]) == 0
        out_dir = Path(cfg["output_dir"])
        ckpt = json.loads((out_dir / "checkpoint.json").read_text())
        assert ckpt["schema_version"] == 1
        assert ckpt["config"]["d_h"] == 8
        assert ckpt["config"]["d"] == 16  # follows the embedding file
        metrics = (out_dir / "metrics.csv").read_text().splitlines()
        assert metrics[0] == "epoch,train_loss,train_acc,val_acc,val_mcc"
        assert len(metrics) == 1 + cfg["epochs"]

    def test_train_outputs_byte_identical_across_runs(self, tmp_path):
        cfg_path, cfg, _ = make_corpus(tmp_path, seed=5)
        outputs = []
        for run in ("a", "b"):
            out_dir = tmp_path / f"out_{run}"
            cfg["output_dir"] = str(out_dir)
            cfg_path.write_text(json.dumps(cfg))
            assert main(["train", "--config", str(cfg_path)]) == 0
            outputs.append(
                ((out_dir / "checkpoint.json").read_bytes(),
                 (out_dir / "metrics.csv").read_bytes())
            )
        assert outputs[0] == outputs[1]

    def test_eval_untrained_near_chance(self, tmp_path, capsys):
        cfg_path, cfg, result = make_corpus(
            tmp_path, seed=7, n_days=120, train_frac=0.2, val_frac=0.1,
        )
        config = ModelConfig(d=16, d_day=3, d_h=8, dropout_p=0.5)
        params = init_params(config, Rng(1234).derive(1))
        ckpt_path = tmp_path / "untrained.json"
        save_checkpoint(ckpt_path, Checkpoint(config=config, params=params))
        code = main(["eval", "--config", str(cfg_path),
                     "--checkpoint", str(ckpt_path), "--split", "test"])
        assert code == 0
        out = capsys.readouterr().out
        acc = float(out.split("accuracy=")[1].split()[0])
        score = float(out.split("mcc=")[1].split()[0])
        assert 0.4 <= acc <= 0.6
        assert abs(score) <= 0.2

    def test_literal_flags_recorded_in_checkpoint(self, tmp_path, capsys):
        cfg_path, cfg, _ = make_corpus(tmp_path, seed=4, epochs=1)
        assert main(["train", "--config", str(cfg_path),
                     "--literal-output-attention"]) == 0
        ckpt = json.loads(
            (Path(cfg["output_dir"]) / "checkpoint.json").read_text()
        )
        assert ckpt["config"]["literal_output_attention"] is True
        assert ckpt["config"]["literal_input_mean"] is False
        capsys.readouterr()
        assert main(["eval", "--config", str(cfg_path), "--split", "val"]) == 0
        assert "accuracy=" in capsys.readouterr().out

    def test_eval_dimension_mismatch_is_input_error(self, tmp_path, capsys):
        cfg_path, cfg, _ = make_corpus(tmp_path)
        config = ModelConfig(d=50, d_day=3, d_h=8)
        params = init_params(config, Rng(1).derive(1))
        ckpt_path = tmp_path / "wrong.json"
        save_checkpoint(ckpt_path, Checkpoint(config=config, params=params))
        assert main(["eval", "--config", str(cfg_path),
                     "--checkpoint", str(ckpt_path)]) == 1
        assert "dimension" in capsys.readouterr().err


class TestExplain:
    def _trained(self, tmp_path):
        cfg_path, cfg, result = make_corpus(tmp_path, seed=2, epochs=1)
        assert main(["train", "--config", str(cfg_path)]) == 0
        return cfg_path, cfg, result

    def test_explain_table(self, tmp_path, capsys):
        cfg_path, cfg, result = self._trained(tmp_path)
        manifest = Path(cfg["output_dir"]) / "checkpoint.json"
        assert manifest.exists()
        # pick a prediction date with full history from the ground truth
        truth = [json.loads(l) for l in result.truth_path.read_text().splitlines()]
        target = truth[3]["prediction_date"]
        capsys.readouterr()
        code = main(["explain", "--config", str(cfg_path), "--date", target])
        out = capsys.readouterr().out
        assert code == 0
        assert out.startswith(f"prediction {target}:")
        assert "headline" in out

    def test_explain_json_parses(self, tmp_path, capsys):
        cfg_path, cfg, result = self._trained(tmp_path)
        truth = [json.loads(l) for l in result.truth_path.read_text().splitlines()]
        target = truth[0]["prediction_date"]
        capsys.readouterr()
        code = main(["explain", "--config", str(cfg_path), "--date", target,
                     "--format", "json"])
        out = capsys.readouterr().out
        assert code == 0
        doc = json.loads(out)
        assert doc["prediction_date"] == target

    def test_date_without_history_is_input_error(self, tmp_path, capsys):
        cfg_path, cfg, result = self._trained(tmp_path)
        capsys.readouterr()
        code = main(["explain", "--config", str(cfg_path), "--date", "2015-01-06"])
        assert code == 1
        assert "7-day history" in capsys.readouterr().err

    def test_invalid_date_is_input_error(self, tmp_path, capsys):
        cfg_path, cfg, result = self._trained(tmp_path)
        capsys.readouterr()
        assert main(["explain", "--config", str(cfg_path),
                     "--date", "not-a-date"]) == 1


class TestSynthCommand:
    def test_writes_all_files(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({
            "output_dir": str(tmp_path / "fixture"),
            "synth_days": 35,
            "synth_signal_strength": 0.5,
            "seed": 3,
        }))
        assert main(["synth", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        for name in ("news.jsonl", "prices.csv", "entities.json",
                     "embeddings.txt", "truth.jsonl"):
            assert (tmp_path / "fixture" / name).exists()
            assert name in out


class TestGradcheckCommand:
    def test_passes_and_prints_max_error(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "overall max_rel_err=" in out
        assert out.count("literal_input_mean=") == 4
        assert "passed" in out


class TestParsing:
    @pytest.mark.parametrize("command", [
        "prepare", "train", "eval", "explain", "synth", "gradcheck",
    ])
    def test_help_exits_zero(self, command, capsys):
        assert main([command, "--help"]) == 0
        out = capsys.readouterr().out
        assert "--config" in out

    def test_unknown_flag_exits_one(self, capsys):
        assert main(["prepare", "--frobnicate"]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_command_exits_one(self, capsys):
        assert main(["dance"]) == 1

    def test_unknown_config_key_is_input_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({"frobnicate": 1}))
        assert main(["prepare", "--config", str(cfg_path)]) == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_console_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "newsgru.cli", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "prepare" in proc.stdout
