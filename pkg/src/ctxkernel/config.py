"""Flat key-value run configuration with command-line overrides.

The config file is plain text, one ``key = value`` per line, ``#`` comments.
Every experiment setting lives here so a run is reproducible from the file
plus the seed; command-line flags override individual keys.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .svm import SvmConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    manifest: str = ""
    output_dir: str = "run"
    checkpoint: str = ""  # defaults to <output_dir>/checkpoint
    variant: str = "layerwise"
    depth: int = 3
    radius: int = 1
    init_map: str = "linear"
    levels: int = 16
    hi_max: float | None = None  # override the train-split ceiling for hi
    l2_normalize: bool = False
    mean_pool: bool = False
    gamma: float | None = None
    gamma_factor: float = 0.9
    learning_rate: float = 1e-3
    decay: float = 0.98
    clip_norm: float = 10.0
    p_steps: int = 1
    max_alternations: int = 100
    stop_tol: float = 1e-4
    cost: float = 0.03
    costs: tuple[float, ...] | None = None
    svm_tol: float = 1e-10
    max_passes: int = 20000
    seed: int = 0
    threads: int | None = None  # None = hardware parallelism
    ensemble: bool = False
    ensemble_members: int = 10
    ensemble_neg_ratio: float = 3.0
    protocol: str = "imageclef"
    top_n: int = 5
    eval_split: str = "test"
    figures: bool = False

    def checkpoint_dir(self) -> Path:
        if self.checkpoint:
            return Path(self.checkpoint)
        return Path(self.output_dir) / "checkpoint"

    def train_config(self, threads: int) -> TrainConfig:
        return TrainConfig(
            variant=self.variant,
            depth=self.depth,
            radius=self.radius,
            init_map=self.init_map,
            levels=self.levels,
            l2_normalize=self.l2_normalize,
            mean_pool=self.mean_pool,
            gamma=self.gamma,
            gamma_factor=self.gamma_factor,
            learning_rate=self.learning_rate,
            decay=self.decay,
            clip_norm=self.clip_norm,
            p_steps=self.p_steps,
            max_alternations=self.max_alternations,
            stop_tol=self.stop_tol,
            svm=SvmConfig(
                cost=self.cost, costs=self.costs, tol=self.svm_tol, max_passes=self.max_passes
            ),
            seed=self.seed,
            threads=threads,
        )


_BOOL_WORDS = {"on": True, "true": True, "1": True, "off": False, "false": False, "0": False}


def _parse_value(name: str, kind, raw: str):
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() not in _BOOL_WORDS:
            raise ConfigError(f"key {name}: expected on/off, got {raw!r}")
        return _BOOL_WORDS[raw.lower()]
    if kind == "int":
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"key {name}: expected an integer, got {raw!r}") from exc
    if kind == "float":
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"key {name}: expected a number, got {raw!r}") from exc
    if kind == "optfloat":
        if raw.lower() in ("none", "auto"):
            return None
        return _parse_value(name, "float", raw)
    if kind == "optint":
        if raw.lower() in ("none", "auto"):
            return None
        return _parse_value(name, "int", raw)
    if kind == "floats":
        if raw.lower() == "none":
            return None
        try:
            return tuple(float(tok) for tok in raw.split(","))
        except ValueError as exc:
            raise ConfigError(f"key {name}: expected comma-separated numbers, got {raw!r}") from exc
    return raw


_KEY_KINDS = {
    "manifest": "str",
    "output_dir": "str",
    "checkpoint": "str",
    "variant": "str",
    "depth": "int",
    "radius": "int",
    "init_map": "str",
    "levels": "int",
    "hi_max": "optfloat",
    "l2_normalize": "bool",
    "mean_pool": "bool",
    "gamma": "optfloat",
    "gamma_factor": "float",
    "learning_rate": "float",
    "decay": "float",
    "clip_norm": "float",
    "p_steps": "int",
    "max_alternations": "int",
    "stop_tol": "float",
    "cost": "float",
    "costs": "floats",
    "svm_tol": "float",
    "max_passes": "int",
    "seed": "int",
    "threads": "optint",
    "ensemble": "bool",
    "ensemble_members": "int",
    "ensemble_neg_ratio": "float",
    "protocol": "str",
    "top_n": "int",
    "eval_split": "str",
    "figures": "bool",
}

assert set(_KEY_KINDS) == {f.name for f in fields(RunConfig)}


def parse_config(path: str | Path) -> RunConfig:
    """Read a flat key-value file into a RunConfig; unknown keys are errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _KEY_KINDS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, _KEY_KINDS[key], value)
    return RunConfig(**values)


def apply_overrides(config: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Replace config fields with non-None command-line values."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    bad = set(updates) - _KEY_KINDS.keys()
    if bad:
        raise ConfigError(f"unknown override keys: {sorted(bad)}")
    return replace(config, **updates)
