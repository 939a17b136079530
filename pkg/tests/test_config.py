import pytest

from megadagger.config import Config, ConfigError, apply_overrides, dump_config, load_config, parse_config_text


def test_defaults_are_valid():
    cfg = Config().validate()
    assert cfg.safety.alpha == 0.42 and cfg.safety.gamma == 0.2 and cfg.safety.beta == 70
    assert cfg.conflict.epsilon == 0.99


def test_dump_load_round_trip(tmp_path):
    cfg = apply_overrides(Config(), {"safety.beta": "40", "expert.3.pu": "0.25",
                                     "train.warm_start": "true"})
    path = tmp_path / "c.txt"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_flags_override_file(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\nsafety.beta = 10\nrun.seed=4\n")
    cfg = load_config(path, {"safety.beta": "20"})
    assert cfg.safety.beta == 20 and cfg.run.seed == 4


@pytest.mark.parametrize("items,key", [
    ({"safety.gama": "0.1"}, "safety.gama"),
    ({"nosuch.field": "1"}, "nosuch.field"),
    ({"safety.gamma": "0"}, "safety.gamma"),
    ({"safety.beta": "abc"}, "safety.beta"),
    ({"run.mode": "DAGGER"}, "run.mode"),
    ({"gate.d_release": "0.5"}, "gate.d_release"),
    ({"expert.9.pu": "0.1"}, "expert.9.pu"),
    ({"expert.1.color": "red"}, "expert.1.color"),
])
def test_errors_name_the_key(items, key):
    with pytest.raises(ConfigError) as err:
        apply_overrides(Config(), items)
    assert err.value.key == key


def test_missing_file_and_bad_line(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.txt")
    with pytest.raises(ConfigError):
        parse_config_text("safety.beta 3")
