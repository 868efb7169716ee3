"""Shared exception types with exit-code semantics for the CLI."""

from __future__ import annotations


class UsageError(Exception):
    """Bad flags, missing files, or an inconsistent configuration (exit 1)."""


class DataError(Exception):
    """Malformed or contradictory input data (exit 2).

    `location` names the offending file/line or record so the message can
    point at the data, not just describe it.
    """

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)
