"""
Pipeline module for scenekit: manifest, logging, run report and CLI subcommands.
"""

from .config import InstanceSpec, PipelineManifest, PlaneConfig, SceneSection, TextureSection, default_seed
from .log_setup import setup_logger
from .run_report import RunReport, TraceWriter, validate_report
from .runner import COMMANDS, build_parser, run

__all__ = [
    "InstanceSpec", "PipelineManifest", "PlaneConfig", "SceneSection", "TextureSection", "default_seed",
    "setup_logger", "RunReport", "TraceWriter", "validate_report", "COMMANDS", "build_parser", "run",
]
