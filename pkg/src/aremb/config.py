"""Run configuration: defaults, JSON config file, and flag overrides.

Precedence is flag > file > default, resolved field by field.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields


@dataclass
class ModelSection:
    vocab_size: int | None = None  # None: taken from data metadata
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq: int = 64
    seed: int = 0


@dataclass
class IcSection:
    k: int = 5
    lr: float = 3e-3
    epochs: int = 2
    batch_size: int = 32
    max_records: int | None = None


@dataclass
class CdaSection:
    tau: float = 0.1
    beta: float = 0.1
    variant: str = "sigmoid"
    lr: float = 3e-4
    epochs: int = 4
    batch_size: int = 32
    negatives: int = 1
    max_records: int | None = None


@dataclass
class DataSection:
    n_entities: int = 20
    set_min: int = 3
    set_max: int = 4
    n_train: int = 2000
    n_eval: int = 200
    n_negatives: int = 1


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    ic: IcSection = field(default_factory=IcSection)
    cda: CdaSection = field(default_factory=CdaSection)
    data: DataSection = field(default_factory=DataSection)

    @classmethod
    def resolve(cls, config_path: str | None, overrides: dict[str, dict] | None = None) -> "RunConfig":
        """Merge defaults, an optional JSON file, and flag overrides (None = unset)."""
        file_values: dict = {}
        if config_path is not None:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
        overrides = overrides or {}
        run = cls()
        for section_field in fields(cls):
            section = getattr(run, section_field.name)
            from_file = file_values.get(section_field.name, {})
            from_flags = overrides.get(section_field.name, {})
            for f in fields(section):
                if from_flags.get(f.name) is not None:
                    setattr(section, f.name, from_flags[f.name])
                elif f.name in from_file:
                    setattr(section, f.name, from_file[f.name])
        return run

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
