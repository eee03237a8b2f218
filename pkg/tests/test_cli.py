import json
import logging

import pandas as pd
import pytest
import yaml

from main import EXIT_FAILURE, EXIT_INVALID, EXIT_OK, main


@pytest.fixture(autouse=True)
def info_logs(caplog):
    caplog.set_level(logging.INFO)


def write_config(path, source, **experiment):
    tree = {
        "data": {"source_path": str(source)},
        "experiment": {"step_size": 10, "budget": 30, "seeds": [42, 4711], **experiment},
        "trainer": {"epochs_per_step": 3},
        "tracking": {"revision": "test"},
    }
    path.write_text(yaml.safe_dump(tree), encoding="utf-8")
    return str(path)


@pytest.fixture
def config(tmp_path, raw_dir):
    return write_config(tmp_path / "exp.yaml", raw_dir)


@pytest.fixture
def store_dir(tmp_path):
    return str(tmp_path / "store")


def last_line(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


class TestConvert:
    def test_convert_then_cached(self, config, store_dir, capsys, caplog):
        assert main(["convert", "--config", config, "--store", store_dir]) == EXIT_OK
        run_id = last_line(capsys)
        assert run_id.startswith("convert-")

        caplog.clear()
        assert main(["convert", "--config", config, "--store", store_dir]) == EXIT_OK
        assert last_line(capsys) == run_id
        assert "convert: matching run" in caplog.text
        assert "skipped" in caplog.text

    def test_missing_raw_file(self, tmp_path, store_dir, caplog):
        config = write_config(tmp_path / "exp.yaml", tmp_path / "nowhere")
        assert main(["convert", "--config", config, "--store", store_dir]) == EXIT_FAILURE
        assert str(tmp_path / "nowhere" / "train.jsonl") in caplog.text

    def test_invalid_config(self, tmp_path, raw_dir, store_dir, caplog):
        config = write_config(tmp_path / "exp.yaml", raw_dir, step_size=0)
        assert main(["convert", "--config", config, "--store", store_dir]) == EXIT_INVALID
        assert "experiment.step_size" in caplog.text

    def test_config_required(self, store_dir):
        with pytest.raises(SystemExit) as excinfo:
            main(["convert", "--store", store_dir])
        assert excinfo.value.code == 2


class TestRun:
    def test_run_with_override(self, config, store_dir, capsys):
        assert main(["run", "--config", config, "--store", store_dir, "--set", "experiment.max_steps=2"]) == EXIT_OK
        assert last_line(capsys).startswith("aggregate-")

    def test_unknown_strategy(self, config, store_dir, caplog):
        code = main(["run", "--config", config, "--store", store_dir, "--set", "teacher.strategy=oracle"])
        assert code == EXIT_INVALID
        assert "unknown strategy 'oracle'" in caplog.text

    def test_span_corpus_converts_but_does_not_run(self, tmp_path, store_dir, caplog):
        raw = tmp_path / "spans"
        raw.mkdir()
        for name in ("train", "dev", "test"):
            record = {"text": "Berlin is big", "labels": [[0, 6, "LOC"]]}
            (raw / f"{name}.jsonl").write_text(json.dumps(record) + "\n", encoding="utf-8")
        config = write_config(tmp_path / "spans.yaml", raw)
        assert main(["convert", "--config", config, "--store", store_dir]) == EXIT_OK
        assert main(["run", "--config", config, "--store", store_dir]) == EXIT_INVALID
        assert "span tasks unsupported" in caplog.text
        assert "seed_run(42)" not in caplog.text

    def test_step_size_change_reuses_conversion(self, config, store_dir, caplog):
        assert main(["run", "--config", config, "--store", store_dir, "--set", "experiment.max_steps=1"]) == EXIT_OK
        caplog.clear()
        argv = ["run", "--config", config, "--store", store_dir,
                "--set", "experiment.max_steps=1", "--set", "experiment.step_size=20"]
        assert main(argv) == EXIT_OK
        assert "convert: matching run" in caplog.text
        assert "load_converted: matching run" in caplog.text
        assert "seed_run(42): started run" in caplog.text

    def test_revision_change_recomputes_everything(self, config, store_dir, caplog):
        assert main(["run", "--config", config, "--store", store_dir, "--set", "experiment.max_steps=1"]) == EXIT_OK
        caplog.clear()
        argv = ["run", "--config", config, "--store", store_dir,
                "--set", "experiment.max_steps=1", "--set", "tracking.revision=other"]
        assert main(argv) == EXIT_OK
        assert "matching run" not in caplog.text
        assert "load_raw: started run" in caplog.text


class TestReport:
    def test_report_rows(self, config, store_dir, tmp_path, capsys):
        assert main(["run", "--config", config, "--store", store_dir]) == EXIT_OK
        aggregate = last_line(capsys)
        out = tmp_path / "report"
        assert main(["report", "--runs", aggregate, "--out", str(out), "--store", store_dir,
                     "--threshold", "0.5"]) == EXIT_OK

        frame = pd.read_csv(out / f"{aggregate}.csv")
        assert sorted(frame["labeled_count"].unique()) == [5, 15, 25, 35, 45, 55, 65, 75, 85, 95, 100]
        assert len(frame) == 11 * frame["metric"].nunique()
        assert (out / "comparison.svg").exists()
        assert len(pd.read_csv(out / "thresholds.csv")) == 1

    def test_unknown_run(self, store_dir, tmp_path):
        assert main(["report", "--runs", "aggregate-09999", "--out", str(tmp_path), "--store", store_dir]) == EXIT_FAILURE


def test_synthesize(tmp_path, capsys):
    out = tmp_path / "corpus"
    assert main(["synthesize", "--out", str(out), "--train", "20", "--dev", "5", "--test", "5"]) == EXIT_OK
    assert len((out / "train.jsonl").read_text(encoding="utf-8").splitlines()) == 20
    assert (out / "test.jsonl").exists()
