"""
Exceptions shared by the SSF mortality spike.

Input problems are ``ValueError``/``LookupError`` subclasses (CLI exit code 2),
numerical problems are ``NumericalFailure`` (CLI exit code 3).

Copyright (c) 2025 LAB271
SPDX-License-Identifier: Apache-2.0
"""


class LifeTableError(ValueError):
    """Survivor data cannot produce a valid life table."""


class MortalityDataError(ValueError):
    """Deaths/exposures are inconsistent or too few to fit."""


class RuleError(ValueError):
    """A legal rule was evaluated outside its domain."""


class SchemaError(ValueError):
    """An input file does not follow the expected schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MissingVintageError(LookupError):
    """No mortality source is available for the requested table year."""

    def __init__(self, kind: str, year: int, known: list[int]):
        self.kind = kind
        self.year = year
        self.known = known
        listed = ", ".join(str(y) for y in known) or "none"
        super().__init__(f"no {kind} vintage for table year {year} (known years: {listed})")


class NumericalFailure(RuntimeError):
    """A numerical procedure could not produce a trustworthy value."""
