"""Run configuration: defaults, TOML config files, and CLI overrides, merged
in that precedence order. The effective merged config is written into every
run directory before any work starts.

The file format is flat key/value pairs under TOML-style sections; a target
count of 0 means "no cap" (TOML has no null).
"""

import copy
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import SplitSpec
from .distortions import KINDS, LADDERS
from .network import NetworkConfig
from .pooling import PoolingConfig
from .training import TrainConfig


class ConfigError(Exception):
    pass


DEFAULTS = {
    "seed": 0,
    "workers": 0,  # 0 = DEEPQUALITY_WORKERS env or cpu count
    "pooling": {
        "stride": 32,
        "patches_per_image": 70,
        "prefer_high_variance": False,
    },
    "distortions": {
        "kinds": list(KINDS),
        # per-kind 5-entry ladders may override the built-in defaults
        **{kind: list(LADDERS[kind]) for kind in KINDS},
    },
    "dataset": {
        "split_mode": "patch-random",
        "train_count": 50_000,
        "test_count": 10_000,
        "dmos_strategy": "quantile",
    },
    "network": {
        "conv_channels": [16, 32, 64],
        "fc_hidden": 128,
    },
    "training": {
        "epochs": 100,
        "batch_size": 64,
        "learning_rate": 1e-2,
        "lr_decay": 0.5,
        "lr_decay_every": 30,
        "l2_lambda": 1e-4,
        "momentum": 0.0,
        "precision": "float32",
    },
    "aggregator": {
        "feature_dim": 5,
    },
}


def _merge(base, update, explicit, path=""):
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a section")
            _merge(base[key], value, explicit, where)
        else:
            base[key] = value
            explicit.add(where)
    return base


class RunConfig:
    def __init__(self, data, explicit=()):
        self.data = data
        self.explicit = set(explicit)

    @classmethod
    def load(cls, config_path=None, overrides=None):
        data = copy.deepcopy(DEFAULTS)
        explicit = set()
        if config_path is not None:
            with open(config_path, "rb") as f:
                try:
                    file_data = tomllib.load(f)
                except tomllib.TOMLDecodeError as e:
                    raise ConfigError(f"{config_path}: {e}") from e
            _merge(data, file_data, explicit)
        if overrides:
            _merge(data, overrides, explicit)
        return cls(data, explicit)

    @property
    def seed(self):
        return int(self.data["seed"])

    @property
    def workers(self):
        w = int(self.data["workers"])
        return None if w == 0 else w

    @property
    def kinds(self):
        return list(self.data["distortions"]["kinds"])

    def kinds_filter(self):
        """The distortion-kind restriction, or None when left at default.

        Benchmark datasets carry their own kind names, so the built-in kind
        list only filters when the operator explicitly set one.
        """
        return self.kinds if "distortions.kinds" in self.explicit else None

    @property
    def ladders(self):
        return {kind: self.data["distortions"][kind] for kind in KINDS}

    @property
    def feature_dim(self):
        return int(self.data["aggregator"]["feature_dim"])

    @property
    def dmos_strategy(self):
        return self.data["dataset"]["dmos_strategy"]

    def pooling_config(self):
        p = self.data["pooling"]
        return PoolingConfig(stride=int(p["stride"]),
                             patches_per_image=int(p["patches_per_image"]),
                             prefer_high_variance=bool(p["prefer_high_variance"]))

    def split_spec(self):
        d = self.data["dataset"]
        to_target = lambda n: None if int(n) == 0 else int(n)
        return SplitSpec(train_count=to_target(d["train_count"]),
                         test_count=to_target(d["test_count"]),
                         mode=d["split_mode"])

    def network_config(self):
        n = self.data["network"]
        return NetworkConfig(conv_channels=tuple(int(c) for c in n["conv_channels"]),
                             fc_hidden=int(n["fc_hidden"]))

    def train_config(self):
        t = self.data["training"]
        return TrainConfig(
            epochs=int(t["epochs"]), batch_size=int(t["batch_size"]),
            learning_rate=float(t["learning_rate"]), lr_decay=float(t["lr_decay"]),
            lr_decay_every=int(t["lr_decay_every"]), l2_lambda=float(t["l2_lambda"]),
            momentum=float(t["momentum"]), seed=self.seed, precision=t["precision"])

    def dump_toml(self):
        """Render the effective config back to TOML text."""
        lines = []
        scalars = {k: v for k, v in self.data.items() if not isinstance(v, dict)}
        for key in sorted(scalars):
            lines.append(f"{key} = {_toml_value(scalars[key])}")
        for section in sorted(k for k, v in self.data.items() if isinstance(v, dict)):
            lines.append("")
            lines.append(f"[{section}]")
            for key in sorted(self.data[section]):
                lines.append(f"{key} = {_toml_value(self.data[section][key])}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.dump_toml())


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot render config value {value!r}")
