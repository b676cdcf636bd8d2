"""Test config.yaml access, defaults, overrides and validation."""

import pytest
import yaml

from components.errors import ConfigError
from components.interfaces import Config
from components.models import DbscanParams


@pytest.fixture
def manifests(tmp_path):
    """Placeholder manifest files; validate only checks that they exist."""
    for name in ("main.json", "camera.json"):
        (tmp_path / name).write_text("{}", encoding="utf-8")
    return tmp_path


def _config(base, **sections) -> Config:
    data = {"inputs": {"main": "main.json"}, **sections}
    return Config.from_dict(data, base)


class TestDefaults:
    """Test the documented default values."""

    def test_empty_config(self):
        """An empty mapping falls back to the defaults."""
        cfg = Config.from_dict({})
        assert cfg.stages == ["normalize", "rank", "evaluate"]
        assert cfg.params.alpha == 0.18
        assert cfg.params.beta == 0.0
        assert (cfg.params.k1, cfg.params.k2, cfg.params.lambda_value) == (7, 2, 0.6)
        assert (cfg.params.lambda1, cfg.params.lambda2) == (0.1, 0.05)
        assert cfg.cluster.beta == 0.0005
        assert cfg.cluster.param_sets == [DbscanParams(0.6, 2)]
        assert cfg.evaluation.top_k == 100
        assert cfg.evaluation.same_camera_relevants
        assert cfg.threading.max_workers == 4
        assert cfg.logging.retention_days == 90

    def test_load_from_file(self, tmp_path):
        """Values are read with safe_load and paths resolve against the file."""
        path = tmp_path / "config.yaml"
        path.write_text(
            yaml.safe_dump({"workdir": "w", "inputs": {"views": ["a.json", "b.json"]}}),
            encoding="utf-8",
        )
        cfg = Config(path)
        assert cfg.workdir == tmp_path.resolve() / "w"
        assert cfg.inputs.views == [tmp_path.resolve() / "a.json", tmp_path.resolve() / "b.json"]
        assert cfg.inputs.main is None

    def test_missing_file(self, tmp_path):
        """A missing config file is a FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            Config(tmp_path / "none.yaml")

    def test_non_mapping(self, tmp_path):
        """The top level must be a mapping."""
        path = tmp_path / "config.yaml"
        path.write_text("- a\n- b\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            Config(path)

    def test_param_sets(self):
        """Explicit parameter sets replace eps and min_samples."""
        cfg = Config.from_dict({"cluster": {"param_sets": [{"eps": 0.5}, {"eps": 0.7, "min_samples": 4}]}})
        assert cfg.cluster.param_sets == [DbscanParams(0.5, 2), DbscanParams(0.7, 4)]


class TestOverride:
    """Test command-line overrides."""

    def test_override_and_none(self):
        """None leaves the file value; max_workers lands in threading."""
        cfg = Config.from_dict({"stages": ["normalize", "rank"], "workdir": "a"})
        cfg.override(stages=None, workdir="b", max_workers=1)
        assert cfg.stages == ["normalize", "rank"]
        assert cfg.config["workdir"] == "b"
        assert cfg.threading.max_workers == 1


class TestValidate:
    """Test that validation names the offending field."""

    def test_valid(self, manifests):
        """A minimal config validates."""
        _config(manifests).validate()

    @pytest.mark.parametrize(
        "sections,field",
        [
            ({"params": {"k2": 9}}, "params.k2"),
            ({"params": {"lambda": 2.0}}, "params.lambda"),
            ({"params": {"beta": -0.1}}, "params.beta"),
            ({"params": {"tracklet_mode": "median"}}, "params.tracklet_mode"),
            ({"params": {"temperature": 0}}, "params.temperature"),
            ({"params": {"ensemble_mode": "vote"}}, "params.ensemble_mode"),
            ({"cluster": {"distance": "cosine"}}, "cluster.distance"),
            ({"cluster": {"rho": 1.5}}, "cluster.rho"),
            ({"cluster": {"param_sets": [{"min_samples": 2}]}}, "cluster.param_sets[0]"),
            ({"evaluation": {"top_k": 0}}, "evaluation.top_k"),
            ({"threading": {"max_workers": 0}}, "threading.max_workers"),
            ({"stages": ["normalize", "sharpen"]}, "stages"),
            ({"stages": "normalize"}, "stages"),
            ({"params": {"camera_mean": "median"}}, "params.camera_mean"),
        ],
    )
    def test_field_errors(self, manifests, sections, field):
        """Each out-of-range value is reported under its dotted path."""
        with pytest.raises(ConfigError) as exc:
            _config(manifests, **sections).validate()
        assert exc.value.field == field

    @pytest.mark.parametrize(
        "sections,field",
        [
            ({"params": {"k1": "seven"}}, "params.k1"),
            ({"params": {"k1": 7.5}}, "params.k1"),
            ({"params": {"alpha": [0.1]}}, "params.alpha"),
            ({"params": {"beta": True}}, "params.beta"),
            ({"params": {"block_size": "big"}}, "params.block_size"),
            ({"cluster": {"eps": "wide"}}, "cluster.eps"),
            ({"cluster": {"param_sets": [{"eps": 0.5, "min_samples": 2.5}]}}, "cluster.param_sets[0].min_samples"),
            ({"evaluation": {"i2t": "yes"}}, "evaluation.i2t"),
            ({"evaluation": {"top_k_map": "all"}}, "evaluation.top_k_map"),
            ({"threading": {"max_workers": "4x"}}, "threading.max_workers"),
            ({"logging": {"retention_days": 1.5}}, "logging.retention_days"),
            ({"history": {"enabled": "no"}}, "history.enabled"),
            ({"params": 5}, "params"),
        ],
    )
    def test_malformed_values(self, manifests, sections, field):
        """Values of the wrong type are config errors, never bare ValueErrors."""
        with pytest.raises(ConfigError) as exc:
            _config(manifests, **sections).validate()
        assert exc.value.field == field

    def test_integral_floats_accepted(self):
        """7.0 and "7" both read as the integer 7."""
        assert Config.from_dict({"params": {"k1": 7.0}}).params.k1 == 7
        assert Config.from_dict({"params": {"k1": "7"}}).params.k1 == 7

    def test_camera_mean_default(self):
        """The image's own tracklet is left out of its camera mean by default."""
        assert Config.from_dict({}).params.camera_mean == "other_tracklets"
        assert Config.from_dict({"params": {"camera_mean": "all"}}).params.camera_mean == "all"

    def test_missing_manifest(self, manifests):
        """A configured manifest must exist."""
        cfg = Config.from_dict({"inputs": {"main": "main.json", "orientation": "o.json"}}, manifests)
        with pytest.raises(ConfigError) as exc:
            cfg.validate()
        assert exc.value.field == "inputs.orientation"

    def test_needs_some_input(self, manifests):
        """Either main or query plus gallery is required."""
        with pytest.raises(ConfigError) as exc:
            Config.from_dict({"inputs": {"query": "main.json"}}, manifests).validate()
        assert exc.value.field == "inputs"
