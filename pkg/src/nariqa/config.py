"""Run configuration: defaults, TOML file, flag overrides, snapshots.

Precedence is flags > config file > defaults. Every pipeline run writes the
resolved configuration next to its outputs; replaying a snapshot reproduces
every output file bit-identically.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .train import TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1

    # toy scene generation
    scenes: int = 3
    frames_per_scene: int = 41
    frame_h: int = 96
    frame_w: int = 96

    # corpus
    per_target: int = 5
    coverage_min: float = 0.30
    coverage_max: float = 0.85
    theta_sc: float = 30.0 / 255.0
    k_min: int = 1
    k_max: int = 15
    tau: float = 0.005
    feather_sigma: float = 2.0

    # embedding
    patch_size: int = 14
    embed_dim: int = 64

    # training (paper defaults; toy preset overrides lr/epochs)
    margin1: float = 0.3
    margin2: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda_kl: float = 0.05
    t_start: float = 0.01
    t_end: float = 1.0
    learning_rate: float = 1e-5
    batch_size: int = 16
    epochs: int = 80
    weight_decay: float = 0.01
    triplet_orientation: str = "standard"

    # evaluation / study
    window: int = 10
    theta: float = 0.8
    min_raters: int = 5
    heatmap_beta: float = 1.5

    @classmethod
    def toy(cls, **overrides) -> "RunConfig":
        base = dict(learning_rate=1e-3, epochs=30)
        base.update(overrides)
        return cls(**base)

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            margin1=self.margin1,
            margin2=self.margin2,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            lambda_kl=self.lambda_kl,
            t_start=self.t_start,
            t_end=self.t_end,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
            embed_dim=self.embed_dim,
            patch_size=self.patch_size,
            triplet_orientation=self.triplet_orientation,
            checkpoint_ring=max(self.window, 10),
        )


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise ConfigError(f"cannot serialize {type(v)} to TOML")


def save_config(cfg: RunConfig, path) -> None:
    lines = [f"{name} = {_format_value(value)}" for name, value in asdict(cfg).items()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return merge_config(RunConfig(), data, source=str(path))


def merge_config(cfg: RunConfig, overrides: dict, source: str = "overrides") -> RunConfig:
    valid = {f.name: f.type for f in fields(RunConfig)}
    values = asdict(cfg)
    for key, value in overrides.items():
        if key not in valid:
            raise ConfigError(f"{source}: unknown configuration key {key!r}")
        values[key] = value
    return RunConfig(**values)
