"""Configuration module for the conformal constraints lab."""

from .settings import LabSettings, get_settings
from .run_config import RunConfig, load_config, parse_config

__all__ = ["LabSettings", "get_settings", "RunConfig", "load_config", "parse_config"]
