"""Experiment configuration (YAML), validated strictly before any work starts."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthSection(_Strict):
    n_samples: int = Field(1000, ge=10)
    n_features: int = Field(12, ge=2)
    class_separation: float = Field(2.0, ge=0)
    fraud_fraction: float = Field(0.25, gt=0, lt=1)
    informative: Optional[int] = None


class CsvSection(_Strict):
    path: str
    label_column: str = "fraud_reported"
    drop_columns: list[str] = []
    kinds: dict[str, Literal["numeric", "categorical"]] = {}


class DatasetSection(_Strict):
    synth: Optional[SynthSection] = None
    csv: Optional[CsvSection] = None
    ratios: tuple[float, float, float] = (0.75, 0.05, 0.20)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.synth is None) == (self.csv is None):
            raise ValueError("dataset needs exactly one of 'synth' or 'csv'")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError("dataset.ratios must sum to 1")
        return self


class BiRecurrentSection(_Strict):
    epochs: int = Field(10, ge=0)
    lr: float = Field(1e-3, gt=0)
    hidden_size: int = Field(220, ge=1)
    dropout_rate: float = Field(0.5, ge=0, lt=1)
    batch_size: int = Field(32, ge=1)


class GbtSection(_Strict):
    n_trees: int = Field(100, ge=1)
    max_leaves: int = Field(8, ge=2)
    lambda_reg: float = Field(1.0, ge=0)
    shrinkage: float = Field(0.1, gt=0)
    min_child_weight: float = Field(1.0, ge=0)
    max_depth: Optional[int] = None
    histogram_bins: Optional[int] = None


class KnnSection(_Strict):
    k: int = Field(5, ge=1)


class MarginSection(_Strict):
    C: float = Field(10.0, gt=0)
    epochs: int = Field(300, ge=1)
    lr: float = Field(0.05, gt=0)


class ModelsSection(_Strict):
    birecurrent: Optional[BiRecurrentSection] = BiRecurrentSection()
    gbt_level: Optional[GbtSection] = GbtSection()
    gbt_leaf: Optional[GbtSection] = GbtSection()
    knn: Optional[KnnSection] = KnnSection()
    margin: Optional[MarginSection] = MarginSection()

    def enabled(self) -> dict[str, dict]:
        return {name: sec.model_dump() for name in type(self).model_fields
                if (sec := getattr(self, name)) is not None}


class AttackParams(_Strict):
    steps: int = Field(10, ge=1)
    step_size: Optional[float] = Field(None, gt=0)
    random_start: bool = False
    max_iters: int = Field(100, ge=1)
    acceptance: Literal["per_sample", "batch"] = "per_sample"


class AttacksSection(_Strict):
    names: list[Literal["fgsm", "bim", "pgd", "random_noise"]] = ["fgsm", "bim", "pgd", "random_noise"]
    grid: list[float] = Field(default_factory=lambda: [round(0.05 * i, 2) for i in range(1, 11)])
    report_epsilon: float = Field(0.5, ge=0, le=1)
    params: dict[str, AttackParams] = {}

    @model_validator(mode="after")
    def _grid(self):
        if not self.grid or any(b < a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("attacks.grid must be non-empty and ascending")
        if any(not 0 <= e <= 1 for e in self.grid):
            raise ValueError("attacks.grid values must lie in [0, 1]")
        unknown = set(self.params) - {"fgsm", "bim", "pgd", "random_noise"}
        if unknown:
            raise ValueError(f"attacks.params has unknown attacks {sorted(unknown)}")
        return self


class RlSection(_Strict):
    batch: int = Field(32, ge=1)
    horizon: int = Field(16, ge=1)
    latent_dim: int = Field(64, ge=1)
    alpha: float = Field(0.1, gt=0)
    gamma: float = Field(0.95, gt=0, le=1)
    episodes: int = Field(300, ge=0)
    target_label: Literal[0, 1] = 0
    generator_lr: float = Field(1e-3, gt=0)
    es_samples: int = Field(16, ge=2)
    es_sigma: float = Field(0.02, gt=0)
    anchor: bool = False
    max_queries: Optional[int] = None


class GanRlSection(_Strict):
    targets: list[str] = ["gbt_level", "birecurrent"]
    pretrain_epochs: int = Field(40, ge=0)
    pretrain_lr: float = Field(1e-4, gt=0)
    pretrain_beta1: float = Field(0.5, gt=0, lt=1)
    non_saturating: bool = False
    eval_batches: int = Field(100, ge=1)
    rl: RlSection = RlSection()


class MetricsSection(_Strict):
    asr_mode: Literal["sample_rate", "batch_all"] = "sample_rate"


class ExplainSection(_Strict):
    n_explained: int = Field(20, ge=1)
    n_permutations: int = Field(100, ge=1)
    background_size: int = Field(50, ge=1)
    top_k: Optional[int] = None
    models: list[str] = ["gbt_level", "birecurrent"]


class ExperimentConfig(_Strict):
    seed: int = 7
    dataset: DatasetSection = DatasetSection(synth=SynthSection())
    models: ModelsSection = ModelsSection()
    attacks: AttacksSection = AttacksSection()
    ganrl: GanRlSection = GanRlSection()
    metrics: MetricsSection = MetricsSection()
    explain: ExplainSection = ExplainSection()

    def digest(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


class ConfigError(ValueError):
    pass


def load_config(path: str | Path | None, seed: int | None = None) -> ExperimentConfig:
    """Parse and validate a YAML config; ``seed`` overrides the file's global seed."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    if seed is not None:
        data["seed"] = seed
    try:
        return ExperimentConfig.model_validate(data)
    except Exception as exc:  # pydantic.ValidationError
        raise ConfigError(str(exc)) from None
