import pytest

from wavecip.config import RunConfig, build_setup, config_from_dict, dump_config, load_config
from wavecip.exceptions import ConfigError


def test_defaults():
    cfg = RunConfig()
    assert cfg.domain.h == 0.02 and cfg.time.tau == 0.002 and cfg.time.T == 2.0
    assert cfg.inversion.zeta == 0.5 and cfg.inversion.s_z == 0.05
    s = build_setup(cfg)
    assert s.grid.shape == (63, 111) and s.time_grid.nt == 1000


def test_unknown_section_and_key():
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"time": {"dt": 0.1}})
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])


def test_invalid_values():
    with pytest.raises(ConfigError):
        config_from_dict({"inversion": {"zeta": 1.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"noise": {"delta": -0.1}})
    with pytest.raises(ConfigError):
        config_from_dict({"domain": {"h": 0}})


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("domain: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_digest_stable_and_sensitive(tmp_path):
    a, b = RunConfig(), RunConfig()
    assert a.digest() == b.digest() and len(a.digest()) == 12
    assert a.with_section("noise", seed=2).digest() != a.digest()
    path = tmp_path / "cfg.yaml"
    cfg = a.with_section("inversion", n_max=7)
    dump_config(cfg, path)
    again = load_config(path)
    assert again == cfg and again.digest() == cfg.digest()


def test_partial_yaml_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("noise:\n  delta: 0.05\n  seed: 3\n")
    cfg = load_config(path)
    assert cfg.noise.delta == 0.05 and cfg.noise.seed == 3
    assert cfg.domain == RunConfig().domain


def test_with_section_unknown():
    with pytest.raises(ConfigError):
        RunConfig().with_section("nothing", a=1)
