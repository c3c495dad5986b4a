# modules/core/errors.py
# -*- coding: utf-8 -*-

"""
Exception hierarchy shared by every module.

Simulation *failures* are not exceptions: the simulator turns them into
termination events on the trace. The classes below cover precondition
violations, parsing and transport problems, and contract breaks.
"""

from __future__ import annotations

from typing import Iterable, List


class CalibrationError(Exception):
    """Base class for all framework errors."""
    ...


# ────────────────────────────────────────────────────────────────────────────────
# Simulator
# ────────────────────────────────────────────────────────────────────────────────

class ParameterValidationError(CalibrationError, ValueError):
    """A parameter set violates bounds or physical invariants."""
    ...


class ProtocolValidationError(CalibrationError, ValueError):
    """A protocol has no steps, a nonpositive C-rate or out-of-window cutoffs."""
    ...


class DomainError(CalibrationError, ValueError):
    """Argument outside the mathematical domain (stoichiometry, log of ≤ 0)."""
    ...


class KineticsError(CalibrationError):
    """Nonpositive exchange current density."""
    ...


class ConcentrationBoundError(CalibrationError):
    """Surface concentration left [0, c_max]."""
    ...


class SolverError(CalibrationError):
    """Linear solve or root bracketing failed."""
    ...


# ────────────────────────────────────────────────────────────────────────────────
# Memory / proposers
# ────────────────────────────────────────────────────────────────────────────────

class ScheduleError(CalibrationError):
    """Round records appended out of sequence."""
    ...


class ParseError(CalibrationError):
    """No well-formed JSON object could be extracted from proposer text."""
    ...


class RejectedKeyError(CalibrationError):
    """Proposed update names parameters outside the search keys."""

    def __init__(self, offenders: Iterable[str]) -> None:
        self.offenders: List[str] = sorted(set(offenders))
        super().__init__("rejected parameter names: " + ", ".join(self.offenders))


class ProposerError(CalibrationError):
    """Proposer could not produce an update (transport, exhausted script...)."""
    ...


class ConfigurationError(CalibrationError):
    """Missing or inconsistent configuration (e.g. no LLM endpoint)."""
    ...


# ────────────────────────────────────────────────────────────────────────────────
# Data ingestion / metrics
# ────────────────────────────────────────────────────────────────────────────────

class SchemaError(CalibrationError, ValueError):
    """Cycling file lacks a mapped column or has an unparseable row."""
    ...


class EmptySeriesError(CalibrationError, ValueError):
    """No complete cycle detected in cycling records."""
    ...


class ContractError(CalibrationError, ValueError):
    """Caller broke an input contract (e.g. series of unequal length)."""
    ...
