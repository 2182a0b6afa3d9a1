"""Run configuration: one INI-style file with a section per component.

Every key has a default, so an empty file is a valid config. Unknown sections
or keys are rejected, and the component dataclasses are constructed on load
so their own invariants are enforced too::

    [model]
    base_channels = 8
    depth = 3

    [train]
    epochs = 30
    learning_rate = 0.0003
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import AugmentConfig, TileSpec
from .diffmap import EDGE_OPS, FeatureFileExtractor, RandomCNNExtractor
from .model import UNetConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    in_channels: int = 6
    base_channels: int = 8
    depth: int = 3
    head_channels: int = 0  # 0 means "same as base_channels"
    fd_channels: int = 16
    use_fda: bool = True
    use_ec: bool = True
    init_seed: int = 0

    def unet(self) -> UNetConfig:
        return UNetConfig(self.in_channels, self.base_channels, self.depth, self.head_channels or None)


@dataclass(frozen=True)
class DiffmapSection:
    extractor: str = "random:0:16"
    edge: str = "canny"
    canny_sigma: float = 1.4
    canny_low: float = 0.1
    canny_high: float = 0.2
    sobel_threshold: float = 0.8
    prewitt_threshold: float = 0.6
    kernel: int = 3

    def edge_params(self) -> dict:
        if self.edge == "canny":
            return {"sigma": self.canny_sigma, "t_low": self.canny_low, "t_high": self.canny_high}
        return {"threshold": self.sobel_threshold if self.edge == "sobel" else self.prewitt_threshold}

    def make_extractor(self):
        return parse_extractor(self.extractor)


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 3e-4
    optimizer: str = "adam"
    seed: int = 0
    threshold: float = 0.5

    def train_config(self, checkpoint: Optional[str] = None) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.optimizer,
                           self.seed, self.threshold, checkpoint)


@dataclass(frozen=True)
class AugmentSection:
    enabled: bool = False
    copies: int = 1
    pad_to: int = 1024
    crop_scale_min: float = 0.7
    crop_scale_max: float = 1.3
    output_size: int = 512
    rotation_min: float = -15.0
    rotation_max: float = 15.0
    illumination_min: float = 0.8
    illumination_max: float = 1.2

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            self.pad_to,
            (self.crop_scale_min, self.crop_scale_max),
            self.output_size,
            (self.rotation_min, self.rotation_max),
            (self.illumination_min, self.illumination_max),
        )


@dataclass(frozen=True)
class TileSection:
    window: int = 512
    stride: int = 512
    test_every: int = 5

    def tile_spec(self) -> TileSpec:
        return TileSpec(self.window, self.stride, self.test_every)


@dataclass(frozen=True)
class PathsSection:
    data: str = ""
    checkpoint: str = ""


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    diffmap: DiffmapSection = field(default_factory=DiffmapSection)
    train: TrainSection = field(default_factory=TrainSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    tile: TileSection = field(default_factory=TileSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def __post_init__(self):
        try:
            self.model.unet()
            self.train.train_config()
            self.augment.augment_config()
            self.tile.tile_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.model.fd_channels < 1:
            raise ConfigError(f"model.fd_channels must be positive, got {self.model.fd_channels}")
        if self.diffmap.edge not in EDGE_OPS:
            raise ConfigError(f"diffmap.edge must be one of {EDGE_OPS}, got {self.diffmap.edge!r}")
        if not 0 < self.diffmap.canny_low < self.diffmap.canny_high:
            raise ConfigError("diffmap needs 0 < canny_low < canny_high")
        if self.diffmap.kernel < 1 or self.diffmap.kernel % 2 == 0:
            raise ConfigError(f"diffmap.kernel must be odd and positive, got {self.diffmap.kernel}")
        if self.augment.copies < 1:
            raise ConfigError(f"augment.copies must be >= 1, got {self.augment.copies}")
        check_extractor_spec(self.diffmap.extractor)


SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}


def check_extractor_spec(spec: str) -> None:
    kind, _, rest = spec.partition(":")
    if kind == "random":
        parts = rest.split(":")
        if len(parts) != 2 or not all(p.strip().lstrip("-").isdigit() for p in parts):
            raise ConfigError(f"extractor {spec!r}: expected random:<seed>:<c_p>")
        if int(parts[1]) < 4 or int(parts[1]) % 4:
            raise ConfigError(f"extractor {spec!r}: c_p must be a positive multiple of 4")
    elif kind == "file":
        if len(rest.split(",")) != 2:
            raise ConfigError(f"extractor {spec!r}: expected file:<features_a>,<features_b>")
    else:
        raise ConfigError(f"extractor {spec!r}: kind must be random or file")


def parse_extractor(spec: str):
    check_extractor_spec(spec)
    kind, _, rest = spec.partition(":")
    if kind == "random":
        seed, c_p = (int(p) for p in rest.split(":"))
        return RandomCNNExtractor(seed, c_p)
    path_a, path_b = rest.split(",")
    return FeatureFileExtractor(path_a, path_b)


def _convert(section: str, key: str, raw: str, kind: type):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(raw)
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        return kind(raw.strip()) if kind is not str else raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def _field_types(cls) -> dict:
    return {f.name: type(f.default) for f in dataclasses.fields(cls)}


def from_mapping(values: dict) -> RunConfig:
    """Build a RunConfig from ``{section: {key: string}}``; unknown names raise ConfigError."""
    sections = {}
    for name, factory in SECTIONS.items():
        cls = type(factory())
        types = _field_types(cls)
        given = values.get(name, {})
        unknown = sorted(set(given) - set(types))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
        sections[name] = cls(**{k: _convert(name, k, v, types[k]) for k, v in given.items()})
    extra = sorted(set(values) - set(SECTIONS))
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(extra)}")
    return RunConfig(**sections)


def parse(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="\0none")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_mapping({s: dict(cp[s]) for s in cp.sections()})


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def serialize(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for name in SECTIONS:
        section = getattr(cfg, name)
        cp[name] = {f.name: _format(getattr(section, f.name)) for f in dataclasses.fields(section)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def save(path, cfg: RunConfig) -> None:
    Path(path).write_text(serialize(cfg))


def with_overrides(cfg: RunConfig, assignments) -> RunConfig:
    """Apply ``section.key=value`` strings on top of ``cfg``."""
    values = {name: {f.name: _format(getattr(getattr(cfg, name), f.name))
                     for f in dataclasses.fields(getattr(cfg, name))} for name in SECTIONS}
    for item in assignments:
        target, sep, raw = item.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        if section not in values:
            raise ConfigError(f"override {item!r}: unknown section {section!r}")
        if key not in values[section]:
            raise ConfigError(f"override {item!r}: unknown key {key!r} in [{section}]")
        values[section][key] = raw
    return from_mapping(values)
