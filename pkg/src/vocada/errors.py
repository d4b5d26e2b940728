"""Exception hierarchy shared across the package.

Exit-code mapping in the CLI: ``DataError`` -> 1, ``GatewayError`` -> 2.
"""

from __future__ import annotations


class VocadaError(Exception):
    """Base class for all errors raised by this package."""


class DataError(VocadaError):
    """Invalid or inconsistent input data (files, records, configuration)."""


class GatewayError(VocadaError):
    """A model endpoint could not produce a usable response."""
