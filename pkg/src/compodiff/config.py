"""Sectioned key=value experiment configuration.

Example::

    [data]
    train_size = 2000
    [training]
    epochs = 20
    lr = 1e-3

Lines starting with ``#`` or ``;`` are comments. Unknown sections or keys
and malformed values are rejected with the offending line number.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    channels: int = 4
    length: int = 128
    seed: int = 0
    train_size: int = 2000
    test_size: int = 256
    test_offset: int = 1_000_000
    shared_tempo: bool = True


@dataclass
class ModelSection:
    n_latents: int = 2
    latent_dim: int = 64
    channels: int = 32
    groups: int = 8
    attention: bool = False
    operator: str = "mean"
    zero_init_output: bool = True
    seed: int = 0


@dataclass
class TrainingSection:
    epochs: int = 50
    lr: float = 1e-4
    batch: int = 32
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class SamplingSection:
    steps: int = 100


@dataclass
class PriorSection:
    p_mask: float = 0.8
    channels: int = 32
    groups: int = 8
    epochs: int = 50
    lr: float = 1e-4
    batch: int = 32
    seed: int = 0


@dataclass
class EvaluationSection:
    crops: int = 256
    seed: int = 0
    workers: int = 1
    wav: int = 0
    operators: str = "sum,mean,min,max"


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    prior: PriorSection = field(default_factory=PriorSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        cfg = cls()
        for name, values in raw.items():
            section = getattr(cfg, name)
            for key, value in values.items():
                setattr(section, key, value)
        return cfg

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with every seed in the config replaced by ``seed``."""
        cfg = ExperimentConfig.from_dict(self.to_dict())
        for section in (cfg.data, cfg.model, cfg.training, cfg.prior, cfg.evaluation):
            section.seed = seed
        return cfg


def _convert(raw: str, kind: type, where: str):
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected {kind.__name__}, got {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    section, section_name = None, ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        where = f"{source}:{lineno}"
        line = line.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in {f.name for f in fields(ExperimentConfig)}:
                raise ConfigError(f"{where}: unknown section [{name}]")
            section, section_name = getattr(cfg, name), name
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected key = value, got {line!r}")
        if section is None:
            raise ConfigError(f"{where}: key outside of any section")
        key, value = (part.strip() for part in line.split("=", 1))
        types = {f.name: f.type for f in fields(section)}
        if key not in types:
            raise ConfigError(f"{where}: unknown key {key!r} in section [{section_name}]")
        kind = {"int": int, "float": float, "bool": bool, "str": str}[types[key]]
        setattr(section, key, _convert(value, kind, where))
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name, values in cfg.to_dict().items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in values.items())
        lines.append("")
    return "\n".join(lines)
