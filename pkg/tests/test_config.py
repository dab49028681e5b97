import pytest

from eacc.config import Config, ConfigError, load_config


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg == Config()
    assert cfg.mpc.N == 25 and cfg.vehicle.F_t_max == 4000.0


def test_values_and_types(tmp_path):
    path = tmp_path / "lab.ini"
    path.write_text("[vehicle]\nm_v = 1400\nF_t_max = 3500\n\n[mpc]\nN = 10\neps2 = 50\npolish = no\n"
                    "\n[train]\nmax_epochs = 3\nlearning_rate = 0.01\n")
    cfg = load_config(path)
    assert cfg.vehicle.m_v == 1400.0 and cfg.vehicle.F_t_max == 3500.0
    assert cfg.mpc.N == 10 and isinstance(cfg.mpc.N, int) and cfg.mpc.eps2 == 50.0 and cfg.mpc.polish is False
    assert cfg.train.max_epochs == 3 and cfg.train.learning_rate == 0.01
    assert cfg.to_dict()["mpc"]["N"] == 10


@pytest.mark.parametrize("text", [
    "[engine]\nx = 1\n",
    "[mpc]\nhorizon = 5\n",
    "[mpc]\nN = five\n",
    "[mpc]\npolish = maybe\n",
    "[mpc]\nN = 0\n",
    "[vehicle]\nm_eq = 10\n",
    "no section header\n",
])
def test_bad_files_raise(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")
