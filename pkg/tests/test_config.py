import pytest

from nimiwae.config import DEFAULTS, ConfigError, load_config, parse_override, validate


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg == DEFAULTS and cfg is not DEFAULTS

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[training]\nepochs = 7\n[experiment]\nmechanisms = ['MAR']\n")
        cfg = load_config(path, [parse_override("training.epochs=9"), parse_override("model.activation=relu")])
        assert cfg["training"]["epochs"] == 9
        assert cfg["experiment"]["mechanisms"] == ["MAR"]
        assert cfg["model"]["activation"] == "relu"
        assert DEFAULTS["training"]["epochs"] == 500

    def test_override_value_parsing(self):
        assert parse_override("training.lr=0.001") == ("training", "lr", 0.001)
        assert parse_override("experiment.replicates=[1, 2]") == ("experiment", "replicates", [1, 2])
        assert parse_override("data.path=/tmp/x.csv") == ("data", "path", "/tmp/x.csv")
        with pytest.raises(ConfigError):
            parse_override("epochs=3")

    @pytest.mark.parametrize(
        "text",
        [
            "[bogus]\nx = 1\n",
            "[training]\nepochz = 1\n",
            "[training]\nepochs = 'many'\n",
            "[training]\nepochs = 0\n",
            "[experiment]\nmethods = ['knn']\n",
            "[experiment]\nmechanisms = ['MNARX']\n",
            "[training]\nepochs = \n",
        ],
    )
    def test_invalid(self, tmp_path, text):
        path = tmp_path / "c.toml"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_validate_rejects_unknown_key(self):
        cfg = load_config()
        cfg["model"]["width"] = 3
        with pytest.raises(ConfigError):
            validate(cfg)
