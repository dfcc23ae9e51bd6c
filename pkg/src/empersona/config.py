"""Run configuration: INI files, dotted overrides, snapshots.

Defaults follow the reference operating point (generator lr 5e-5,
predictor lr 1e-5, batch 64, five candidates with rank slack 1e-3,
ranking weight 1.0, nucleus p 0.8 at temperature 0.7, ten past
responses per prefix). Experiments shrink sizes through these knobs
rather than code changes. ``EMPERSONA_RUNS`` picks the default root
directory for run artifacts.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class CorpusSection:
    n_listeners: int = 40
    convs_per_listener: int = 25
    seed: int = 0
    jitter: float = 0.1


@dataclass
class ModelSection:
    d: int = 64
    heads: int = 4
    enc_blocks: int = 2
    dec_blocks: int = 2
    d_ff: int = 256
    max_len: int = 64
    n1: int = 8
    n2: int = 8
    variant: str = "C+E+P"


@dataclass
class PredictorSection:
    d: int = 32
    heads: int = 2
    blocks: int = 1
    d_ff: int = 64
    max_len: int = 48
    lr: float = 1e-5
    epochs: int = 4
    batch_size: int = 16


@dataclass
class TrainingSection:
    lr: float = 5e-5
    batch_size: int = 64
    epochs: int = 3
    clip_norm: float = 1.0
    seed: int = 0
    eval_subset: int = 24


@dataclass
class CalibrationSection:
    beta: float = 1.0
    alpha: float = 0.001
    k: int = 5
    gamma: float = 0.5
    epochs: int = 1
    lr: float = 5e-5


@dataclass
class DecodingSection:
    top_p: float = 0.8
    temperature: float = 0.7
    max_new: int = 24
    beam_size: int = 5


@dataclass
class RetrievalSection:
    d: int = 32
    heads: int = 2
    blocks: int = 1
    d_ff: int = 64
    max_len: int = 48
    lr: float = 1e-3
    epochs: int = 2
    batch_size: int = 16
    past_pool_n: int = 10


@dataclass
class Config:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    model: ModelSection = field(default_factory=ModelSection)
    predictor: PredictorSection = field(default_factory=PredictorSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    decoding: DecodingSection = field(default_factory=DecodingSection)
    retrieval: RetrievalSection = field(default_factory=RetrievalSection)


def runs_root() -> Path:
    return Path(os.environ.get("EMPERSONA_RUNS", "runs"))


def _coerce(raw: str, to_type):
    if to_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot read {raw!r} as a boolean")
    return to_type(raw)


def load_config(path=None) -> Config:
    """Config from an INI file; missing file or sections keep defaults."""
    cfg = Config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    for section_name, section in vars(cfg).items():
        if not parser.has_section(section_name):
            continue
        fields = {f.name: f.type for f in dataclasses.fields(section)}
        for key, raw in parser.items(section_name):
            if key not in fields:
                raise KeyError(f"unknown option [{section_name}] {key}")
            current = getattr(section, key)
            setattr(section, key, _coerce(raw, type(current)))
    return cfg


def apply_override(cfg: Config, spec: str) -> None:
    """Apply one ``section.key=value`` override in place."""
    try:
        dotted, raw = spec.split("=", 1)
        section_name, key = dotted.strip().split(".", 1)
    except ValueError:
        raise ValueError(f"override must look like section.key=value, got {spec!r}") from None
    if not hasattr(cfg, section_name):
        raise KeyError(f"unknown config section {section_name!r}")
    section = getattr(cfg, section_name)
    if not hasattr(section, key):
        raise KeyError(f"unknown option [{section_name}] {key}")
    setattr(section, key, _coerce(raw.strip(), type(getattr(section, key))))


def save_config(cfg: Config, path) -> None:
    """Write the full effective configuration as an INI snapshot."""
    parser = configparser.ConfigParser()
    for section_name, section in vars(cfg).items():
        parser.add_section(section_name)
        for f in dataclasses.fields(section):
            parser.set(section_name, f.name, str(getattr(section, f.name)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        parser.write(fh)
