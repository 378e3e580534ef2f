from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .esm import ESMConfig
from .numeric import LN_EPS


@dataclass(frozen=True)
class RunConfig:
    """Model sizes and run settings. Defaults are the desk-scale reference
    configuration; :meth:`full_scale` gives 512 channels, 8 heads, 2048 FFN."""

    d_model: int = 16
    heads: int = 2
    ffn_hidden: int = 32
    kernel_width: int = 1
    eps: float = LN_EPS
    n_speakers: int = 2
    learning_rate: float = 0.3
    steps: int = 500
    seed: int = 7
    n_utterances: int = 16
    max_len: int = 12
    ignore_phonology: bool = False
    gradcheck_h: float = 1e-4
    gradcheck_tolerance: float = 1e-3
    gradcheck_max_entries: int | None = None
    input_path: str | None = None
    output_path: str | None = None
    checkpoint_path: str | None = None

    def __post_init__(self):
        for name in ("d_model", "heads", "ffn_hidden", "kernel_width", "n_speakers", "n_utterances", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0 or self.learning_rate < 0:
            raise ValueError("steps and learning_rate must be non-negative")
        if self.d_model % 2:
            raise ValueError("d_model must be even for the positional encoding")
        self.esm_config()  # validates heads / kernel width

    def esm_config(self) -> ESMConfig:
        return ESMConfig(self.d_model, self.heads, self.ffn_hidden, self.kernel_width, self.eps)

    @classmethod
    def full_scale(cls, **overrides) -> "RunConfig":
        return replace(cls(d_model=512, heads=8, ffn_hidden=2048), **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))
