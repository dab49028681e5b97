"""INI config files for the vehicle, controller and trainer.

Example::

    [vehicle]
    m_v = 1500
    F_t_max = 4000

    [mpc]
    N = 25
    eps2 = 100

    [train]
    max_epochs = 15

Unknown sections or keys are errors so typos do not pass silently.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .mpc import MpcConfig
from .rnn.train import TrainConfig
from .vehicle import VehicleParams

SECTIONS = {"vehicle": VehicleParams, "mpc": MpcConfig, "train": TrainConfig}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}


def _coerce(text: str, default):
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    return float(text)


def load_config(path=None) -> Config:
    """Read ``path`` (or return defaults when ``None``)."""
    if path is None:
        return Config()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep case: F_t_max, N
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]; expected one of {sorted(SECTIONS)}")
    for name, cls in SECTIONS.items():
        defaults = cls() if name != "vehicle" else None
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        if parser.has_section(name):
            for key, text in parser.items(name):
                if key not in known:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{name}]")
                default = getattr(defaults, key) if defaults is not None else known[key].default
                try:
                    kwargs[key] = _coerce(text, 0.0 if default is None else default)
                except ValueError as exc:
                    raise ConfigError(f"{path}: [{name}] {key}: {exc}") from exc
        try:
            out[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: [{name}] {exc}") from exc
    return Config(**out)
