"""Experiment configuration: YAML in, validated dataclasses out.

A config names its scale preset ("toy" or "paper"); preset defaults are
applied first and explicit keys override them, so published values map
one-to-one onto config fields.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..model.config import ModelConfig, paper_config, toy_config
from ..optim.engine import STRATEGIES
from ..tasks.data import TASKS


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every offending field."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class OptimConfig:
    lr: float = 3.0e-4
    warmup_steps: int = 10_000
    decay_steps: int = 100_000
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1.0e-12
    weight_decay: float = 0.01
    batch_size: int = 16
    clip_norm: float | None = None   # global gradient-norm clip; None disables


TOY_OPTIM = OptimConfig(lr=4.0e-3, warmup_steps=10, decay_steps=20_000, batch_size=8,
                        clip_norm=1.0)


@dataclass
class DataConfig:
    root: str | None = None          # existing corpus directory
    toy_seed: int | None = None      # generate a toy corpus under the run dir
    toy_speakers: int = 4
    toy_utts: int = 32
    overfit_utterances: int | None = None
    shared_cmvn: bool = False
    pesq_cmd: str | None = None      # external tool: `cmd ref.wav est.wav` -> score


@dataclass
class TaskOptions:
    asr_alpha: float = 0.3
    tts_teacher_prosody: bool = False
    per_term_sigma: bool = False
    prosody_predictor: bool = True   # disabled = reference-prosody inference


@dataclass
class ExperimentConfig:
    scale: str = "toy"
    run_name: str = "run"
    tasks: list[str] = field(default_factory=lambda: ["asr"])
    strategy: str = "none"
    seed: int = 0
    max_steps: int = 300
    eval_every: int = 0              # 0 = only at the end
    model: ModelConfig = field(default_factory=toy_config)
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(**asdict(TOY_OPTIM)))
    data: DataConfig = field(default_factory=DataConfig)
    options: TaskOptions = field(default_factory=TaskOptions)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "run_name": self.run_name,
            "tasks": list(self.tasks),
            "strategy": self.strategy,
            "seed": self.seed,
            "max_steps": self.max_steps,
            "eval_every": self.eval_every,
            "model": self.model.to_dict(),
            "optim": asdict(self.optim),
            "data": asdict(self.data),
            "options": asdict(self.options),
        }


def _preset(scale: str) -> ExperimentConfig:
    if scale == "paper":
        return ExperimentConfig(scale="paper", model=paper_config(),
                                optim=OptimConfig(), max_steps=110_000)
    return ExperimentConfig()


def from_dict(raw: dict) -> ExperimentConfig:
    problems: list[str] = []
    scale = raw.get("scale", "toy")
    if scale not in ("toy", "paper"):
        problems.append(f"scale: unknown preset {scale!r}")
        scale = "toy"
    cfg = _preset(scale)

    for key in ("run_name", "strategy", "seed", "max_steps", "eval_every"):
        if key in raw:
            setattr(cfg, key, raw[key])
    if "tasks" in raw:
        cfg.tasks = list(raw["tasks"])

    for section, target in (("model", cfg.model), ("optim", cfg.optim),
                            ("data", cfg.data), ("options", cfg.options)):
        for key, value in (raw.get(section) or {}).items():
            if not hasattr(target, key):
                problems.append(f"{section}.{key}: unknown field")
            else:
                if key == "betas":
                    value = tuple(value)
                setattr(target, key, value)

    for task in cfg.tasks:
        if task not in TASKS:
            problems.append(f"tasks: unknown task {task!r}")
    if not cfg.tasks:
        problems.append("tasks: at least one task required")
    if cfg.strategy not in STRATEGIES:
        problems.append(f"strategy: must be one of {STRATEGIES}")
    if cfg.max_steps < 1:
        problems.append("max_steps: must be >= 1")
    if cfg.optim.batch_size < 1:
        problems.append("optim.batch_size: must be >= 1")
    if cfg.data.root is None and cfg.data.toy_seed is None:
        problems.append("data: either data.root or data.toy_seed is required")
    try:
        ModelConfig(**cfg.model.to_dict())
    except ValueError as exc:
        problems.append(f"model: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> ExperimentConfig:
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError(["config file must contain a mapping"])
    return from_dict(raw)


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
