"""Exception types shared across the toolkit."""

from __future__ import annotations


class OtsForgeError(Exception):
    """Base class for all domain errors raised by this package."""


class UnknownSymbol(OtsForgeError):
    """Lookup of an operator name or id that is not registered."""


class NotAnOperator(OtsForgeError):
    """Lookup of an id reserved for 'end' or a special token."""


class ReconstructionError(OtsForgeError):
    """A token sequence cannot be decoded into an operation tree.

    ``reason`` is one of: "empty", "unknown_token", "truncated",
    "slot_mismatch", "constant_mismatch".
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        msg = reason if not detail else f"{reason}: {detail}"
        super().__init__(msg)


class GenerationExhausted(OtsForgeError):
    """Random generation failed to satisfy constraints within the rejection budget."""


class RationalityError(OtsForgeError):
    """A rendered function image fails the rationality checks.

    ``reason`` is "constant" (every channel is numerically constant) or
    "insufficient_domain" (every channel is mostly non-finite).
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        msg = reason if not detail else f"{reason}: {detail}"
        super().__init__(msg)


class NoFinitePoints(OtsForgeError):
    """Every evaluation point was excluded (non-finite value or target)."""


class DegenerateTarget(OtsForgeError):
    """A metric target is empty after padding removal."""


class CorruptShard(OtsForgeError):
    """A stored image block failed its CRC check."""


class SchemaMismatch(OtsForgeError):
    """A dataset or vocab file has an unsupported version or layout."""


class NoCandidates(OtsForgeError):
    """A candidate source yielded nothing usable for the search."""
