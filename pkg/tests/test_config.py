import pytest

from koopman_fcs import config
from koopman_fcs.sim import ConfigError


def test_defaults():
    cfg = config.load()
    assert cfg.seed == 0
    assert cfg.control.n_p == 3 and cfg.control.t_s == 50e-6
    assert cfg.koopman.dictionary == "identity"
    assert cfg.scenario_names() == ["small-signal", "nominal", "nominal-100rpm", "nominal-2500rpm"]


def test_scenario_foc_overrides():
    cfg = config.load()
    small = cfg.scenario("small-signal", "foc")
    assert (small.foc.a, small.foc.oversampling) == (3.0, 6)
    assert small.foc.carrier_freq == pytest.approx(3333.33, rel=1e-5)
    nominal = cfg.scenario("nominal", "foc")
    assert (nominal.foc.a, nominal.foc.oversampling) == (4.0, 5)


def test_yaml_file_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 5\nkoopman:\n  dictionary: identity+const\nfoc:\n  a: 3\n")
    cfg = config.load(path, ["control.n_p=2", "output_dir=elsewhere"])
    assert cfg.seed == 5
    assert cfg.koopman.dictionary == "identity+const"
    assert cfg.foc.a == 3
    assert cfg.control.n_p == 2
    assert cfg.output_dir == "elsewhere"
    assert cfg.training_config().seed == 5


@pytest.mark.parametrize(
    "text", ["bogus: 1\n", "control:\n  t_s: 1e-4\n  nope: 2\n", "scenarios: 3\n", "- 1\n- 2\n"]
)
def test_invalid_configs_rejected(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        config.load(path)


def test_malformed_override():
    with pytest.raises(ConfigError):
        config.load(overrides=["control.n_p"])


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        config.load().scenario("missing", "foc")


def test_missing_file():
    with pytest.raises(ConfigError):
        config.load("/nonexistent/run.yaml")


def test_round_trip_through_dict():
    cfg = config.load(overrides=["seed=9"])
    again = config.from_dict(config.to_dict(cfg))
    assert again == cfg
