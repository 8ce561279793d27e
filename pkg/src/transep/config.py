"""Experiment configuration: dataclasses for every stage plus a strict
parser for the sectioned key-value config file (unknown sections or keys
are rejected so typos fail loudly).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .datagen import CorpusSpec
from .decoder import DecodeConfig
from .errors import ConfigError
from .model import ModelConfig
from .rescorer import LasConfig, RescoreConfig
from .transducer import PenaltyConfig

VALID_STAGES = ("rnnt_ce", "mwer", "las_ce", "las_mwer")


@dataclass(frozen=True)
class TrainingConfig:
    stages: tuple[str, ...] = VALID_STAGES
    use_eos_label: bool = True
    rnnt_epochs: int = 4
    rnnt_learning_rate: float = 0.3
    rnnt_batch_size: int = 8
    clip_norm: float = 5.0
    eval_every: int = 100
    mwer_epochs: int = 1
    mwer_learning_rate: float = 0.02
    mwer_include_late_penalty: bool = True
    las_epochs: int = 3
    las_learning_rate: float = 0.25
    las_batch_size: int = 8
    las_mwer_epochs: int = 1
    las_mwer_learning_rate: float = 0.01
    las_mwer_scope: str = "both"
    seed: int = 5

    def validate(self) -> None:
        if not self.stages:
            raise ConfigError("TrainingConfig: field 'stages' must be non-empty")
        order = {name: i for i, name in enumerate(VALID_STAGES)}
        last = -1
        for stage in self.stages:
            if stage not in order:
                raise ConfigError(f"TrainingConfig: unknown stage '{stage}'")
            if order[stage] <= last:
                raise ConfigError(f"TrainingConfig: stage '{stage}' out of order")
            last = order[stage]
        if self.las_mwer_scope not in ("las", "both"):
            raise ConfigError("TrainingConfig: field 'las_mwer_scope' must be 'las' or 'both'")
        for name in (
            "rnnt_epochs",
            "rnnt_batch_size",
            "eval_every",
            "mwer_epochs",
            "las_epochs",
            "las_batch_size",
            "las_mwer_epochs",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"TrainingConfig: field '{name}' must be positive")
        for name in ("rnnt_learning_rate", "mwer_learning_rate", "las_learning_rate", "las_mwer_learning_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"TrainingConfig: field '{name}' must be positive")


@dataclass(frozen=True)
class SweepConfig:
    alpha_grid: tuple[float, ...] = (1.0, 2.0)
    beta_grid: tuple[float, ...] = (0.3, 0.5, 0.7)

    def validate(self) -> None:
        if not self.alpha_grid or not self.beta_grid:
            raise ConfigError("SweepConfig: grids must be non-empty")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    train_fraction: float = 10.0 / 11.0
    model: ModelConfig = field(default_factory=lambda: ModelConfig(vocab_size=8))
    las: LasConfig = field(default_factory=LasConfig)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    rescore: RescoreConfig = field(default_factory=RescoreConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    out_dir: str = "out"

    def validate(self) -> None:
        self.corpus.validate()
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("ExperimentConfig: field 'train_fraction' must lie in (0, 1)")
        self.model.validate()
        self.las.validate()
        self.penalty.validate()
        self.decode.validate()
        self.rescore.validate()
        self.training.validate()
        self.sweep.validate()
        if self.model.input_dim != self.corpus.feature_dim:
            raise ConfigError("ExperimentConfig: model input_dim must equal corpus feature_dim")
        if self.model.vocab_size != self.corpus.vocab_size:
            raise ConfigError("ExperimentConfig: model vocab_size must equal corpus vocab_size")
        if self.las.vocab_size != self.corpus.vocab_size:
            raise ConfigError("ExperimentConfig: rescorer vocab_size must equal corpus vocab_size")
        if self.las.encoder_input_dim != self.model.encoder_units:
            raise ConfigError(
                "ExperimentConfig: rescorer encoder_input_dim must equal model encoder_units"
            )


def _parse_bool(raw: str, where: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got '{raw}'")


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.replace(",", " ").split())


def _parse_str_list(raw: str) -> tuple[str, ...]:
    return tuple(part for part in raw.replace(",", " ").split())


# section -> key -> (target dataclass field, converter)
_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "corpus": {
        "vocab_size": ("vocab_size", int),
        "feature_dim": ("feature_dim", int),
        "frames_per_token": ("frames_per_token", int),
        "tokens_min": ("tokens_per_utterance.0", int),
        "tokens_max": ("tokens_per_utterance.1", int),
        "lead_min": ("leading_silence_frames.0", int),
        "lead_max": ("leading_silence_frames.1", int),
        "trail_min": ("trailing_silence_frames.0", int),
        "trail_max": ("trailing_silence_frames.1", int),
        "noise_std": ("feature_noise_std", float),
        "num_utterances": ("num_utterances", int),
        "seed": ("seed", int),
        "frame_ms": ("frame_ms", float),
        "train_fraction": ("@train_fraction", float),
    },
    "model": {
        "encoder_layers": ("encoder_layers", int),
        "encoder_units": ("encoder_units", int),
        "encoder_stride": ("encoder_stride", int),
        "prediction_layers": ("prediction_layers", int),
        "prediction_units": ("prediction_units", int),
        "joint_units": ("joint_units", int),
        "seed": ("seed", int),
    },
    "las": {
        "encoder_layers": ("encoder_layers", int),
        "encoder_units": ("encoder_units", int),
        "attention_dim": ("attention_dim", int),
        "attention_heads": ("attention_heads", int),
        "decoder_units": ("decoder_units", int),
        "seed": ("seed", int),
    },
    "penalty": {
        "alpha_early": ("alpha_early", float),
        "alpha_late": ("alpha_late", float),
        "t_buffer": ("t_buffer", int),
    },
    "decode": {
        "beam_size": ("beam_size", int),
        "nbest_k": ("nbest_k", int),
        "alpha_eos": ("alpha_eos", float),
        "beta": ("beta", float),
        "fallback_silence_frames": ("fallback_silence_frames", int),
        "fallback_enabled": ("fallback_enabled", "bool"),
        "max_token_expansions": ("max_token_expansions", int),
        "stop_on_endpoint": ("stop_on_endpoint", "bool"),
        "endpoint_on_any_hypothesis": ("endpoint_on_any_hypothesis", "bool"),
    },
    "rescore": {
        "lambda_coverage": ("lambda_coverage", float),
        "tau_coverage": ("tau_coverage", float),
        "include_rnnt_eos_score": ("include_rnnt_eos_score", "bool"),
        "global_eos_offset": ("global_eos_offset", float),
    },
    "training": {
        "stages": ("stages", "str_list"),
        "use_eos_label": ("use_eos_label", "bool"),
        "rnnt_epochs": ("rnnt_epochs", int),
        "rnnt_learning_rate": ("rnnt_learning_rate", float),
        "rnnt_batch_size": ("rnnt_batch_size", int),
        "clip_norm": ("clip_norm", float),
        "eval_every": ("eval_every", int),
        "mwer_epochs": ("mwer_epochs", int),
        "mwer_learning_rate": ("mwer_learning_rate", float),
        "mwer_include_late_penalty": ("mwer_include_late_penalty", "bool"),
        "las_epochs": ("las_epochs", int),
        "las_learning_rate": ("las_learning_rate", float),
        "las_batch_size": ("las_batch_size", int),
        "las_mwer_epochs": ("las_mwer_epochs", int),
        "las_mwer_learning_rate": ("las_mwer_learning_rate", float),
        "las_mwer_scope": ("las_mwer_scope", str),
        "seed": ("seed", int),
    },
    "sweep": {
        "alpha_grid": ("alpha_grid", "float_list"),
        "beta_grid": ("beta_grid", "float_list"),
    },
    "paths": {
        "out_dir": ("@out_dir", str),
    },
}


def _convert(raw: str, converter, where: str):
    if converter == "bool":
        return _parse_bool(raw, where)
    if converter == "float_list":
        return _parse_float_list(raw)
    if converter == "str_list":
        return _parse_str_list(raw)
    try:
        return converter(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a config file; unknown sections/keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    overrides: dict[str, dict] = {section: {} for section in _SCHEMA}
    top_level: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section '[{section}]'")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key '{key}' in section '[{section}]'")
            target, converter = _SCHEMA[section][key]
            value = _convert(raw, converter, f"{path} [{section}] {key}")
            if target.startswith("@"):
                top_level[target[1:]] = value
            else:
                overrides[section][target] = value

    def build(section: str, default):
        pending = dict(overrides[section])
        ranges: dict[str, list] = {}
        for target in list(pending):
            if "." in target:
                base, idx = target.split(".")
                current = list(getattr(default, base))
                ranges.setdefault(base, current)[int(idx)] = pending.pop(target)
        for base, values in ranges.items():
            pending[base] = tuple(values)
        return replace(default, **pending) if pending else default

    corpus = build("corpus", CorpusSpec())
    model_cfg = build(
        "model", ModelConfig(input_dim=corpus.feature_dim, vocab_size=corpus.vocab_size)
    )
    model_cfg = replace(model_cfg, input_dim=corpus.feature_dim, vocab_size=corpus.vocab_size)
    las_cfg = build(
        "las",
        LasConfig(encoder_input_dim=model_cfg.encoder_units, vocab_size=corpus.vocab_size),
    )
    las_cfg = replace(
        las_cfg, encoder_input_dim=model_cfg.encoder_units, vocab_size=corpus.vocab_size
    )
    cfg = ExperimentConfig(
        corpus=corpus,
        model=model_cfg,
        las=las_cfg,
        penalty=build("penalty", PenaltyConfig()),
        decode=build("decode", DecodeConfig()),
        rescore=build("rescore", RescoreConfig()),
        training=build("training", TrainingConfig()),
        sweep=build("sweep", SweepConfig()),
        **top_level,
    )
    cfg.validate()
    return cfg


def config_fingerprint(cfg: ExperimentConfig) -> str:
    """Stable textual identity of a config, for reproducibility checks."""
    parts = []
    for f in fields(cfg):
        parts.append(f"{f.name}={getattr(cfg, f.name)!r}")
    return "\n".join(parts)
