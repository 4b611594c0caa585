"""Exception hierarchy shared across the harness.

Each family maps to one CLI exit code: validation problems exit 1,
transport problems exit 2, judge-output parse problems exit 3.
"""

from __future__ import annotations


class HarnessError(Exception):
    exit_code = 1


class ValidationError(HarnessError, ValueError):
    """Bad input data: schema, manifest, config, audio or parameters."""

    exit_code = 1


class TransportError(HarnessError):
    """A judge endpoint could not be reached or answered with an HTTP error."""

    exit_code = 2


class ParseError(HarnessError, ValueError):
    """Judge output did not follow the expected grammar."""

    exit_code = 3
