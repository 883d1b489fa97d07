"""Pipeline orchestration: declarative config, full run, plots."""

from .config import RunConfig, load_yaml
from .pipeline import run_pipeline

__all__ = ["RunConfig", "load_yaml", "run_pipeline"]
