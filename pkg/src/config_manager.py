"""Configuration management for the digitization pipeline"""

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

from src.aggregate import AggregateConfig
from src.dataset_gen import GenConfig, NoiseConfig
from src.graph_build import GraphConfig
from src.line_detect import LineDetectConfig
from src.raster import OTSU
from src.shape_detect import ShapeConfig
from src.symbol_detect import SymbolDetectConfig
from src.text_extract import TextConfig


@dataclass(frozen=True)
class RasterConfig:
    resize_width: int = 7168
    threshold: Union[int, str] = OTSU

    def __post_init__(self):
        if self.resize_width < 1:
            raise ValueError(f"resize_width must be >= 1, got {self.resize_width}")
        if self.threshold != OTSU and not isinstance(self.threshold, int):
            raise ValueError(f"threshold must be an integer or {OTSU!r}, got {self.threshold!r}")


@dataclass(frozen=True)
class RunConfig:
    threads: int = 1
    write_graph_json: bool = True
    history_path: str = 'logs/digitize_history.json'

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True)
class PipelineConfig:
    raster: RasterConfig = field(default_factory=RasterConfig)
    line_detect: LineDetectConfig = field(default_factory=LineDetectConfig)
    shape: ShapeConfig = field(default_factory=ShapeConfig)
    symbol_detect: SymbolDetectConfig = field(default_factory=SymbolDetectConfig)
    text: TextConfig = field(default_factory=TextConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    aggregate: AggregateConfig = field(default_factory=AggregateConfig)
    generator: GenConfig = field(default_factory=GenConfig)
    pipeline: RunConfig = field(default_factory=RunConfig)

    def with_overrides(self, resize_width: Optional[int] = None, threads: Optional[int] = None,
                       rules: Optional[str] = None, seed: Optional[int] = None,
                       count: Optional[int] = None) -> 'PipelineConfig':
        """Apply command-line overrides on top of file values"""
        config = self
        if resize_width is not None:
            config = replace(config, raster=replace(config.raster, resize_width=resize_width))
        if threads is not None:
            config = replace(config, pipeline=replace(config.pipeline, threads=threads),
                             text=replace(config.text, threads=threads),
                             symbol_detect=replace(config.symbol_detect, threads=threads))
        if rules is not None:
            config = replace(config, aggregate=replace(config.aggregate, rules_path=rules))
        if seed is not None:
            config = replace(config, generator=replace(config.generator, seed=seed))
        if count is not None:
            config = replace(config, generator=replace(config.generator, count=count))
        return config


SECTIONS = {f.name: f.type for f in fields(PipelineConfig)}
PATH_KEYS = {('shape', 'rules_path'), ('aggregate', 'rules_path')}


class ConfigManager:
    """Manages configuration loading and validation"""

    def __init__(self, config_path: str):
        self.config_path = Path(config_path)

    def load_config(self) -> PipelineConfig:
        """
        Load and validate configuration from JSON file

        Returns:
            PipelineConfig: Module configs; missing keys keep their defaults

        Raises:
            FileNotFoundError: If config file doesn't exist
            ValueError: If config is invalid or carries unknown keys
        """
        if not self.config_path.exists():
            raise FileNotFoundError(f"Configuration file not found: {self.config_path}")

        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                config = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid JSON in config file: {e}")

        self._validate_config(config)
        sections = {}
        for name, values in config.items():
            sections[name] = self._build_section(name, values)
        return PipelineConfig(**sections)

    def _validate_config(self, config: Dict[str, Any]) -> None:
        """Reject unknown sections and keys"""
        if not isinstance(config, dict):
            raise ValueError("Config root must be a JSON object")
        for name, values in config.items():
            if name not in SECTIONS:
                raise ValueError(f"Unknown config section: {name}")
            if not isinstance(values, dict):
                raise ValueError(f"Config section {name} must be an object")
            known = {f.name for f in fields(SECTIONS[name])}
            unknown = sorted(set(values) - known)
            if unknown:
                raise ValueError(f"Unknown keys in config section {name}: {unknown}")

    def _resolve(self, value: Optional[str]) -> Optional[str]:
        if value is None:
            return None
        path = Path(value)
        if not path.is_absolute() and not path.exists() and (self.config_path.parent / path).exists():
            return str(self.config_path.parent / path)
        return value

    def _build_section(self, name: str, values: Dict[str, Any]):
        values = dict(values)
        for section, key in PATH_KEYS:
            if section == name and key in values:
                values[key] = self._resolve(values[key])
        for key, value in values.items():
            if isinstance(value, list):
                values[key] = tuple(value)
        if name == 'generator' and isinstance(values.get('noise'), dict):
            values['noise'] = NoiseConfig(**values['noise'])
        try:
            return SECTIONS[name](**values)
        except (TypeError, ValueError) as e:
            raise ValueError(f"Invalid config section {name}: {e}")
