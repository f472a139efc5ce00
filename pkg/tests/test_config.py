import json

import pytest

from swarmtrack.config import PRESETS, RunConfig, load_config
from swarmtrack.errors import ConfigError


def test_defaults_and_filter_params():
    cfg = RunConfig().validate()
    fp = cfg.filter_params()
    assert fp.n_particles == 100 and fp.sigma2 == 0.09
    assert fp.csm.alpha == (5.0, 5.0, 5.0) and fp.csm.dt == 0.1
    assert fp.obs.R[0, 0] == 0.01
    assert cfg.warmup_steps == 8
    assert RunConfig(warmup_frames=1).warmup_steps == 0


@pytest.mark.parametrize("bad", [dict(method="kf"), dict(n_particles=0), dict(dt=0),
                                 dict(sigma2=-1), dict(obs_var=float("nan")), dict(alpha=0),
                                 dict(a_max=[1, 0, 1]), dict(warmup_frames=-1),
                                 dict(epipolar_gate=0), dict(min_track_length=0)])
def test_validation(bad):
    with pytest.raises(ConfigError):
        RunConfig(**bad).validate()


def test_precedence(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"method": "cvpf", "seed": 4,
                             "track": {"n_particles": 50, "sigma2": 0.2},
                             "cvpf": {"n_particles": 70},
                             "cskpf": {"n_particles": 90}}))
    cfg = load_config(p)
    assert (cfg.method, cfg.seed, cfg.n_particles, cfg.sigma2) == ("cvpf", 4, 70, 0.2)
    cfg = load_config(p, overrides={"method": "cskpf", "seed": None})
    assert (cfg.method, cfg.seed, cfg.n_particles) == ("cskpf", 4, 90)
    cfg = load_config(p, overrides={"n_particles": 5})
    assert cfg.n_particles == 5


def test_presets_and_errors(tmp_path):
    assert load_config(preset="real").dt == PRESETS["real"].dt == 0.01
    with pytest.raises(ConfigError):
        load_config(preset="lab")
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"track": {"particles": 5}}))
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(p)


def test_round_trip():
    cfg = RunConfig(method="cvpf", a_max=[1.0, 2.0, 3.0], seed=9)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
