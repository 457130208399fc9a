"""Experiment configuration: an INI-style ``key = value`` tree.

Sections and keys (defaults in brackets)::

    [experiment]   task [binary] | three_class, seed [0], cv_folds [4]
    [data]         source [builtin] | csv, modality [T1], feature_dim [8],
                   center_shift [0.5], class_separation [1.5], csv_path
    [model]        num_layers [2], growth [8]
    [federation]   algorithms [fedavg, fedprox:0.1, fedprox:0.3],
                   centralized [true], rounds [100], local_epochs [1],
                   batch_size [16], optimizer [adamw], base_lr [0.001],
                   lr_decay_every [30], lr_decay_factor [10],
                   weight_decay [0.01], reset_optimizer_each_round [true],
                   checkpoint_split [validation] | test,
                   validation_fraction [0.2], workers [1]
    [output]       dir [runs]

``#`` and ``;`` start comments. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace

from fedsim.errors import ValidationError
from fedsim.federation import FedConfig


@dataclass(frozen=True)
class DataSettings:
    source: str = "builtin"
    modality: str = "T1"
    feature_dim: int = 8
    center_shift: float = 0.5
    class_separation: float = 1.5
    csv_path: str = ""


@dataclass(frozen=True)
class ModelSettings:
    num_layers: int = 2
    growth: int = 8


@dataclass(frozen=True)
class FedSettings:
    algorithms: tuple[tuple[str, float], ...] = (("fedavg", 0.0), ("fedprox", 0.1), ("fedprox", 0.3))
    centralized: bool = True
    rounds: int = 100
    local_epochs: int = 1
    batch_size: int = 16
    optimizer: str = "adamw"
    base_lr: float = 0.001
    lr_decay_every: int = 30
    lr_decay_factor: float = 10.0
    weight_decay: float = 0.01
    reset_optimizer_each_round: bool = True
    checkpoint_split: str = "validation"
    validation_fraction: float = 0.2
    # execution detail only; excluded from the config hash
    workers: int = 1

    def fed_config(self, algorithm: str, mu: float, seed: int) -> FedConfig:
        return FedConfig(
            algorithm=algorithm, mu=mu, rounds=self.rounds, local_epochs=self.local_epochs,
            batch_size=self.batch_size, optimizer=self.optimizer, seed=seed,
            reset_optimizer_each_round=self.reset_optimizer_each_round,
            base_lr=self.base_lr, lr_decay_every=self.lr_decay_every,
            lr_decay_factor=self.lr_decay_factor, weight_decay=self.weight_decay,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "binary"
    seed: int = 0
    cv_folds: int = 4
    data: DataSettings = field(default_factory=DataSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    fed: FedSettings = field(default_factory=FedSettings)
    output_dir: str = "runs"

    @property
    def num_classes(self) -> int:
        return 3 if self.task == "three_class" else 2

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    def semantic_dict(self) -> dict:
        """Everything that can change results; output location and worker
        count are left out."""
        d = asdict(self)
        d.pop("output_dir")
        d["fed"].pop("workers")
        d["fed"]["algorithms"] = [list(a) for a in self.fed.algorithms]
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_algorithms(text: str) -> tuple[tuple[str, float], ...]:
    """``fedavg, fedprox:0.1`` -> ``(("fedavg", 0.0), ("fedprox", 0.1))``."""
    out = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        name, _, mu = item.partition(":")
        if name == "fedavg" and not mu:
            out.append(("fedavg", 0.0))
        elif name == "fedprox" and mu:
            out.append(("fedprox", float(mu)))
        else:
            raise ValueError(f"bad algorithm entry {item!r} (use fedavg or fedprox:<mu>)")
    return tuple(out)


_SECTIONS = {
    "experiment": {"task": str, "seed": int, "cv_folds": int},
    "data": {"source": str, "modality": str, "feature_dim": int, "center_shift": float,
             "class_separation": float, "csv_path": str},
    "model": {"num_layers": int, "growth": int},
    "federation": {"algorithms": parse_algorithms, "centralized": _parse_bool, "rounds": int,
                   "local_epochs": int, "batch_size": int, "optimizer": str, "base_lr": float,
                   "lr_decay_every": int, "lr_decay_factor": float, "weight_decay": float,
                   "reset_optimizer_each_round": _parse_bool, "checkpoint_split": str,
                   "validation_fraction": float, "workers": int},
    "output": {"dir": str},
}


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"config syntax: {exc}") from None

    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValidationError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            conv = _SECTIONS[section].get(key)
            if conv is None:
                raise ValidationError(f"unknown key {key!r} in [{section}]")
            try:
                values[section][key] = conv(raw.strip())
            except ValueError as exc:
                raise ValidationError(f"[{section}] {key}: {exc}") from None

    exp = values.get("experiment", {})
    data = dict(values.get("data", {}))
    if data.get("csv_path"):
        data["csv_path"] = os.path.normpath(os.path.join(base_dir, data["csv_path"]))
    cfg = ExperimentConfig(
        task=exp.get("task", "binary"),
        seed=exp.get("seed", 0),
        cv_folds=exp.get("cv_folds", 4),
        data=DataSettings(**data),
        model=ModelSettings(**values.get("model", {})),
        fed=FedSettings(**values.get("federation", {})),
        output_dir=values.get("output", {}).get("dir", "runs"),
    )
    validate(cfg)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


def validate(cfg: ExperimentConfig) -> None:
    """Static checks that need no data. Data-dependent checks live in the runner."""
    problems = []
    if cfg.task not in ("binary", "three_class"):
        problems.append(f"task must be binary or three_class, got {cfg.task!r}")
    if cfg.cv_folds < 2:
        problems.append("cv_folds must be >= 2")
    if cfg.seed < 0:
        problems.append("seed must be non-negative")
    d = cfg.data
    if d.source not in ("builtin", "csv"):
        problems.append(f"data.source must be builtin or csv, got {d.source!r}")
    if d.source == "csv" and not d.csv_path:
        problems.append("data.csv_path is required when source = csv")
    if d.modality.upper() not in ("T1", "T2"):
        problems.append("data.modality must be T1 or T2")
    if d.feature_dim < 1:
        problems.append("data.feature_dim must be >= 1")
    if d.center_shift < 0 or d.class_separation < 0:
        problems.append("data.center_shift and data.class_separation must be >= 0")
    if cfg.model.num_layers < 0 or cfg.model.growth < 1:
        problems.append("model.num_layers must be >= 0 and model.growth >= 1")
    f = cfg.fed
    if not f.algorithms and not f.centralized:
        problems.append("nothing to run: no algorithms and centralized = false")
    if f.checkpoint_split not in ("validation", "test"):
        problems.append("federation.checkpoint_split must be validation or test")
    if not 0 < f.validation_fraction < 1:
        problems.append("federation.validation_fraction must lie in (0, 1)")
    if f.workers < 1:
        problems.append("federation.workers must be >= 1")
    for alg, mu in f.algorithms:
        try:
            f.fed_config(alg, mu, 0)
        except ValueError as exc:
            problems.append(str(exc))
    if not f.algorithms:
        try:
            f.fed_config("fedavg", 0.0, 0)
        except ValueError as exc:
            problems.append(str(exc))
    if problems:
        raise ValidationError("; ".join(problems))
