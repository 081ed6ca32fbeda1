"""Monolith-to-microservice refactoring analysis with ID-passing semantics.

Pipeline: facts -> isolation -> classify -> plan, plus a simulator that runs
scenarios as a monolith, with ID passing, and with JSON passing.
"""

from __future__ import annotations

__version__ = "0.1.0"

from importlib import resources


def data_path(name: str) -> str:
    """Filesystem path of a bundled fixture in ``idpass/data``."""
    return str(resources.files(__name__).joinpath("data", name))
