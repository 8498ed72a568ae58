"""Command-line entry points, configuration, persistence and reports."""

from .config import ConfigError, load
from .container import ContainerError
from .report import Report

__all__ = ["ConfigError", "ContainerError", "Report", "load"]
