"""Error hierarchy with machine-readable codes.

Every error carries a short ``code`` and, where it applies, the name of the
structural hypothesis that failed (``hypothesis``).  The CLI maps the three
base classes onto exit codes.
"""
from __future__ import annotations


class ArtifactError(Exception):
    """Base class. ``exit_code`` is used by the command line front end."""

    exit_code = 1

    def __init__(self, code: str, message: str, *, hypothesis: str | None = None, **details):
        self.code = code
        self.hypothesis = hypothesis
        self.details = details
        text = f"[{code}] {message}"
        if hypothesis:
            text += f" (violated hypothesis: {hypothesis})"
        super().__init__(text)


class ConfigError(ArtifactError):
    exit_code = 2


class HypothesisError(ArtifactError):
    """A structural assumption on the map, horseshoe or perturbation fails."""

    exit_code = 3


class NumericalError(ArtifactError):
    """A numerical procedure did not converge or lost accuracy."""

    exit_code = 4
