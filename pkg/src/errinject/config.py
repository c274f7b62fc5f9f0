"""Run configuration: one JSON document driving every command.

Derived seeds, all offsets from the global ``seed``:

======================  ========
twin DH perturbation    seed
training trajectory     seed + 1
training collection     seed + 2
held-out trajectory     seed + 11
held-out collection     seed + 12
network training        seed
======================  ========
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from .calibration import HandEyeSolution
from .kinematics import DhTable, default_dh
from .learning import DEFAULT_HIDDEN, ENCODINGS, SearchGrid, TrainConfig
from .phystwin import (
    DEFAULT_BACKLASH,
    DEFAULT_GAINS,
    DEFAULT_HYSTERESIS,
    DEFAULT_JOINT_NOISE,
    DEFAULT_TRACKER_NOISE,
    DEFAULT_TRAJECTORY_STEPS,
    TwinConfig,
    default_handeye_true,
    default_interpolation_step,
    make_twin_config,
)


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    dh = default_dh()
    step = default_interpolation_step(dh).tolist()
    return {
        "seed": 0,
        "dh": dh.to_dict(),
        "twin": {
            "kinematic_error": True,
            "max_length_error": 1e-3,
            "max_angle_error": float(np.deg2rad(0.5)),
            "controller_gains": list(DEFAULT_GAINS),
            "hysteresis_magnitude": list(DEFAULT_HYSTERESIS),
            "backlash_width": list(DEFAULT_BACKLASH),
            "noise_sigma_joint": list(DEFAULT_JOINT_NOISE),
            "tracker_noise": {"translation": DEFAULT_TRACKER_NOISE[0], "rotation": float(DEFAULT_TRACKER_NOISE[1])},
            "handeye_true": default_handeye_true().to_dict(),
        },
        "trajectory": {"n_goals": 200, "n_steps": DEFAULT_TRAJECTORY_STEPS, "interpolation_step": step, "margin": 0.05},
        "test_trajectory": {"n_goals": 60, "n_steps": 1000, "interpolation_step": step, "margin": 0.05},
        "training": {**{k: v for k, v in asdict(TrainConfig()).items() if k != "seed"},
                     "hidden": list(DEFAULT_HIDDEN), "encoding": "CPE"},
        "search": {
            "batch_sizes": [32, 64],
            "learning_rates": [0.0064, 0.001],
            "architectures": [[16, 32], [32, 32], [64]],
            "encodings": list(ENCODINGS),
        },
        "paths": {"out_dir": "run"},
    }


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("dh", "handeye_true"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    seed: int
    dh: DhTable
    twin: dict
    trajectory: dict
    test_trajectory: dict
    training: dict
    search: dict
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(default_config())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = _merge(default_config(), data)
        try:
            cfg = cls(int(d["seed"]), DhTable.from_dict(d["dh"]), d["twin"], d["trajectory"],
                      d["test_trajectory"], d["training"], d["search"], d["paths"])
            cfg.twin_config()
            cfg.train_config()
            cfg.search_grid()
            for key in ("trajectory", "test_trajectory"):
                if int(getattr(cfg, key)["n_goals"]) < 1:
                    raise ConfigError(f"{key}.n_goals must be at least 1")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from exc
        return cfg

    def with_seed(self, seed: int) -> "RunConfig":
        out = copy.copy(self)
        out.seed = int(seed)
        return out

    def twin_config(self) -> TwinConfig:
        t = self.twin
        return make_twin_config(
            self.seed, self.dh,
            kinematic_error=bool(t["kinematic_error"]),
            max_length_error=float(t["max_length_error"]),
            max_angle_error=float(t["max_angle_error"]),
            controller_gains=t["controller_gains"],
            hysteresis_magnitude=t["hysteresis_magnitude"],
            backlash_width=t["backlash_width"],
            noise_sigma_joint=t["noise_sigma_joint"],
            tracker_noise=(t["tracker_noise"]["translation"], t["tracker_noise"]["rotation"]),
            handeye_true=HandEyeSolution.from_dict(t["handeye_true"]),
        )

    def train_config(self) -> TrainConfig:
        fields = {k: v for k, v in self.training.items() if k not in ("hidden", "encoding", "seed")}
        cfg = TrainConfig(**fields, seed=self.seed)
        if self.training["encoding"] not in ENCODINGS:
            raise ConfigError(f"unknown encoding {self.training['encoding']!r}")
        return cfg

    @property
    def hidden(self) -> tuple:
        return tuple(int(n) for n in self.training["hidden"])

    @property
    def encoding(self) -> str:
        return self.training["encoding"]

    def search_grid(self) -> SearchGrid:
        return SearchGrid.from_dict(self.search)

    def trajectory_kwargs(self, test=False) -> dict:
        t = self.test_trajectory if test else self.trajectory
        return {
            "n_goals": int(t["n_goals"]),
            "n_steps": None if t.get("n_steps") is None else int(t["n_steps"]),
            "interpolation_step": np.asarray(t["interpolation_step"], float),
            "margin": float(t.get("margin", 0.05)),
            "seed": self.seed + (11 if test else 1),
        }

    def collection_seed(self, test=False) -> int:
        return self.seed + (12 if test else 2)
