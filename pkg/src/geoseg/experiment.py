"""Experiment config files and the named ablation presets.

An experiment file is a ``key = value`` text with four sections::

    [data]      # where scenes come from
    [network]   # NetworkConfig fields (lambda1/lambda2/tau included)
    [train]     # TrainConfig fields
    [output]    # checkpoint and log paths

Every key has a default, so an empty file is valid. Unknown sections or
keys raise :class:`ConfigError`.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .network import NetworkConfig
from .pointcloud import LabeledCloud, generate_scene, load_cloud, random_box_scene
from .textconfig import ConfigError, parse_blocks, to_bool, to_floats, to_ints
from .training import ClassCountError, Metrics, TrainConfig, TrainResult, evaluate, train


@dataclass(frozen=True)
class DataConfig:
    train: tuple[str, ...] = ()  # point files; empty means generate scenes
    heldout: tuple[str, ...] = ()
    num_classes: int = 0  # 0: infer from the files
    generate: int = 4  # generated training scenes when no files are given
    generate_heldout: int = 1
    boxes: int = 4
    density: float = 120.0
    scene_seed: int = 0


@dataclass(frozen=True)
class OutputConfig:
    checkpoint: str = ""
    log: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


# settings that keep a full train+eval run within about a minute on one core
DESK_NETWORK = dict(num_classes=2, width_scale=0.125, k1=8, k2=16, k_eigen=8, k_propagate=8, norm=False)
DESK_TRAIN = dict(epochs=30, batch_size=2, steps_per_epoch=10, points=512, lr=1e-2, lr_decay=0.9)

# named block removals, as NetworkConfig overrides
ABLATIONS: dict[str, dict] = {
    "full": {},
    "no_eigen_gcfr": {"use_eigen": False, "use_gcfr": False},
    "no_gcfr": {"use_gcfr": False},
    "no_residual": {"use_residual": False},
    "no_color": {"use_color": False},
    "no_cbl": {"lambda2": 0.0},
    "no_multistage": {"lambda1": 0.0},
}


def desk_experiment(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(
        data=DataConfig(scene_seed=seed),
        network=NetworkConfig(seed=seed, **DESK_NETWORK),
        train=TrainConfig(seed=seed, **DESK_TRAIN),
    )


def _coerce(value: str, default, key: str):
    if isinstance(default, bool):
        return to_bool(value, key)
    if isinstance(default, int):
        (v,) = to_ints(value, key) or (None,)
        if v is None:
            raise ConfigError(f"{key}: expected an integer")
        return v
    if isinstance(default, float):
        return to_floats(value, 1, key)[0]
    if isinstance(default, str):
        return value
    if isinstance(default, tuple):
        if not default or isinstance(default[0], str):
            return tuple(value.split())
        if isinstance(default[0], int):
            return to_ints(value, key)
        return to_floats(value, None, key)
    raise ConfigError(f"{key}: unsupported value type")


def _update(obj, entries: dict[str, str], section: str, source: str):
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    unknown = sorted(set(entries) - set(known))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) in [{section}]: {', '.join(unknown)}")
    kw = {k: _coerce(v, known[k], f"{section}.{k}") for k, v in entries.items()}
    try:
        return replace(obj, **kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: [{section}] {exc}") from None


def parse_experiment(text: str, source: str = "<string>", base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    seen = set()
    for section, entries in parse_blocks(text, source):
        if section not in ("data", "network", "train", "output"):
            raise ConfigError(f"{source}: unknown section [{section}]")
        if section in seen:
            raise ConfigError(f"{source}: section [{section}] repeated")
        seen.add(section)
        cfg = replace(cfg, **{section: _update(getattr(cfg, section), entries, section, source)})
    return cfg


def load_experiment(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    path = Path(path)
    return parse_experiment(path.read_text(), str(path), base)


def format_experiment(cfg: ExperimentConfig) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return " ".join(fmt(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = []
    for section in ("data", "network", "train", "output"):
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        lines += [f"{f.name} = {fmt(getattr(obj, f.name))}" for f in fields(obj)]
        lines.append("")
    return "\n".join(lines)


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """One seed drives scene generation, initialization and batch sampling."""
    return replace(
        cfg,
        data=replace(cfg.data, scene_seed=seed),
        network=replace(cfg.network, seed=seed),
        train=replace(cfg.train, seed=seed),
    )


def with_ablation(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
    return replace(cfg, network=replace(cfg.network, **ABLATIONS[name]))


def generated_scenes(data: DataConfig, num_classes: int) -> tuple[list[LabeledCloud], list[LabeledCloud]]:
    """Random floor-and-box scenes; held-out seeds never overlap training seeds."""
    if num_classes != 2:
        raise ConfigError("generated scenes have 2 classes; set network.num_classes = 2 or give point files")

    def make(seed):
        return generate_scene(random_box_scene(seed, n_boxes=data.boxes, density=data.density))

    base = 1000 * data.scene_seed
    train = [make(base + i) for i in range(data.generate)]
    held = [make(base + 500 + i) for i in range(data.generate_heldout)]
    return train, held


def load_datasets(cfg: ExperimentConfig) -> tuple[list[LabeledCloud], list[LabeledCloud]]:
    data = cfg.data
    c = cfg.network.num_classes
    if not data.train:
        return generated_scenes(data, c)
    num = data.num_classes or c
    if num != c:
        raise ClassCountError(f"data declares {num} classes, network {c}")

    def read(path):
        cloud = load_cloud(path)
        if cloud.num_classes > num:
            raise ClassCountError(f"{path}: label {cloud.num_classes - 1} outside the {num} configured classes")
        return LabeledCloud(cloud.positions, cloud.colors, cloud.labels, num)

    return [read(p) for p in data.train], [read(p) for p in data.heldout]


def as_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


@dataclass
class RunResult:
    result: TrainResult
    train_metrics: Metrics  # full training scenes
    heldout_metrics: Metrics | None


def run_experiment(cfg: ExperimentConfig, log_heldout: bool = False) -> RunResult:
    """Train on the configured scenes, then score full training and held-out scenes."""
    train_set, held = load_datasets(cfg)
    res = train(train_set, cfg.network, cfg.train, heldout=held if log_heldout else None,
                log_path=cfg.output.log or None, checkpoint_path=cfg.output.checkpoint or None)
    return RunResult(res, evaluate(res.net, train_set), evaluate(res.net, held) if held else None)
