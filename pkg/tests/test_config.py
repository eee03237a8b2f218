import pytest
import yaml

from simulation.config import (
    config_fingerprint,
    parse_config,
    parse_override,
    scoped_fingerprint,
    serialize_config,
    with_overrides,
)
from simulation.errors import ConfigError, ConfigValidationError
from simulation.settings import DEFAULT_SEEDS


def write_yaml(path, tree):
    path.write_text(yaml.safe_dump(tree, sort_keys=False), encoding="utf-8")
    return path


BASE = {
    "data": {"source_path": "corpus", "text_field": "text"},
    "experiment": {"step_size": 1000, "initial_ratio": 0.05, "budget": 5000, "seeds": DEFAULT_SEEDS},
    "teacher": {"strategy": "margin"},
    "tracking": {"revision": "r1"},
}


class TestParseConfig:
    def test_default_seeds_and_ratio_accepted(self, tmp_path):
        cfg = parse_config(write_yaml(tmp_path / "exp.yaml", BASE))
        assert cfg.experiment.seeds == (42, 4711, 768, 4656, 32213)
        assert cfg.experiment.initial_ratio == 0.05
        assert cfg.teacher.strategy == "margin"

    def test_defaults_filled(self, tmp_path):
        cfg = parse_config(write_yaml(tmp_path / "exp.yaml", BASE))
        assert cfg.trainer.name == "softmax_sgd"
        assert cfg.teacher.k is None
        assert cfg.experiment.max_steps is None
        assert cfg.tracking.worker_count == 1

    def test_step_size_zero_rejected(self, tmp_path):
        tree = {**BASE, "experiment": {**BASE["experiment"], "step_size": 0}}
        with pytest.raises(ConfigValidationError) as excinfo:
            parse_config(write_yaml(tmp_path / "exp.yaml", tree))
        assert excinfo.value.field == "experiment.step_size"

    @pytest.mark.parametrize("section, key, value, field", [
        ("experiment", "budget", 10, "experiment.budget"),
        ("experiment", "initial_ratio", 1.0, "experiment.initial_ratio"),
        ("experiment", "step_ratio", 0, "experiment.step_ratio"),
        ("experiment", "step_ratio", 1.5, "experiment.step_ratio"),
        ("experiment", "seeds", [1, 1], "experiment.seeds"),
        ("experiment", "seeds", [], "experiment.seeds"),
        ("trainer", "ngram_order", 4, "trainer.ngram_order"),
        ("trainer", "vocabulary_cap", 0, "trainer.vocabulary_cap"),
        ("tracking", "revision", " ", "tracking.revision"),
        ("tracking", "worker_count", 0, "tracking.worker_count"),
    ])
    def test_invariants(self, tmp_path, section, key, value, field):
        tree = {**BASE, section: {**BASE.get(section, {}), key: value}}
        with pytest.raises(ConfigValidationError) as excinfo:
            parse_config(write_yaml(tmp_path / "exp.yaml", tree))
        assert excinfo.value.field == field

    def test_unknown_key_rejected(self, tmp_path):
        tree = {**BASE, "teacher": {"strategy": "random", "temperature": 2}}
        with pytest.raises(ConfigValidationError, match="teacher.temperature"):
            parse_config(write_yaml(tmp_path / "exp.yaml", tree))

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigValidationError, match="mlflow"):
            parse_config(write_yaml(tmp_path / "exp.yaml", {**BASE, "mlflow": {}}))

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("experiment: [unclosed\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="malformed"):
            parse_config(path)

    def test_wrong_type_names_field(self, tmp_path):
        tree = {**BASE, "experiment": {**BASE["experiment"], "step_size": "many"}}
        with pytest.raises(ConfigValidationError, match="experiment.step_size"):
            parse_config(write_yaml(tmp_path / "exp.yaml", tree))


class TestIncludes:
    def test_fragment_merged_and_overridden(self, tmp_path):
        write_yaml(tmp_path / "base.yaml", {"trainer": {"learning_rate": 0.1, "epochs_per_step": 7}})
        tree = {"include": "base.yaml", **BASE, "trainer": {"learning_rate": 0.3}}
        cfg = parse_config(write_yaml(tmp_path / "exp.yaml", tree))
        assert cfg.trainer.learning_rate == 0.3
        assert cfg.trainer.epochs_per_step == 7

    def test_include_depth_capped(self, tmp_path):
        for i in range(6):
            write_yaml(tmp_path / f"f{i}.yaml", {"include": f"f{i + 1}.yaml"})
        write_yaml(tmp_path / "f6.yaml", BASE)
        with pytest.raises(ConfigError, match="include depth"):
            parse_config(tmp_path / "f0.yaml")


class TestOverrides:
    def test_parse_override(self):
        assert parse_override("experiment.step_size=1000") == {"experiment": {"step_size": 1000}}
        assert parse_override("experiment.seeds=[1, 2]") == {"experiment": {"seeds": [1, 2]}}

    def test_override_without_equals(self):
        with pytest.raises(ConfigError):
            parse_override("experiment.step_size")

    def test_set_changes_fingerprint(self, tmp_path):
        path = write_yaml(tmp_path / "exp.yaml", BASE)
        cfg = parse_config(path, ["experiment.step_size=500"])
        assert cfg.experiment.step_size == 500
        assert config_fingerprint(cfg) != config_fingerprint(parse_config(path))

    def test_with_overrides(self, tmp_path):
        cfg = parse_config(write_yaml(tmp_path / "exp.yaml", BASE))
        changed = with_overrides(cfg, ["teacher.k=4", "trainer.warm_start=false"])
        assert changed.teacher.k == 4
        assert changed.trainer.warm_start is False
        assert cfg.teacher.k is None


class TestFingerprint:
    def test_reserialized_config_same_digest(self, tmp_path):
        cfg = parse_config(write_yaml(tmp_path / "exp.yaml", BASE))
        again = tmp_path / "again.yaml"
        again.write_text(serialize_config(cfg), encoding="utf-8")
        reparsed = parse_config(again)
        assert reparsed == cfg
        assert config_fingerprint(reparsed) == config_fingerprint(cfg)

    def test_field_change_changes_digest(self, tmp_path):
        a = parse_config(write_yaml(tmp_path / "a.yaml", BASE))
        tree = {**BASE, "experiment": {**BASE["experiment"], "step_size": 500}}
        b = parse_config(write_yaml(tmp_path / "b.yaml", tree))
        assert config_fingerprint(a) != config_fingerprint(b)

    def test_step_ratio_changes_digest(self, tmp_path):
        cfg = parse_config(write_yaml(tmp_path / "a.yaml", BASE))
        ratio = with_overrides(cfg, ["experiment.step_ratio=0.1"])
        assert ratio.experiment.step_ratio == 0.1
        assert config_fingerprint(ratio) != config_fingerprint(cfg)

    def test_key_order_irrelevant(self, tmp_path):
        reordered = {key: dict(reversed(list(BASE[key].items()))) for key in reversed(list(BASE))}
        a = parse_config(write_yaml(tmp_path / "a.yaml", BASE))
        b = parse_config(write_yaml(tmp_path / "b.yaml", reordered))
        assert config_fingerprint(a) == config_fingerprint(b)

    def test_tracking_excluded(self, tmp_path):
        a = parse_config(write_yaml(tmp_path / "a.yaml", BASE))
        b = with_overrides(a, ["tracking.worker_count=5", "tracking.store_root=elsewhere"])
        assert config_fingerprint(a) == config_fingerprint(b)

    def test_digest_is_hex_sha256(self, tmp_path):
        digest = config_fingerprint(parse_config(write_yaml(tmp_path / "a.yaml", BASE)))
        assert len(digest) == 64
        int(digest, 16)

    def test_scoped_fingerprint_ignores_other_sections(self, tmp_path):
        a = parse_config(write_yaml(tmp_path / "a.yaml", BASE))
        b = with_overrides(a, ["experiment.step_size=500"])
        assert scoped_fingerprint(a, ("data",)) == scoped_fingerprint(b, ("data",))
        assert scoped_fingerprint(a, ("data",), extra={"raw": "x"}) != scoped_fingerprint(a, ("data",))
