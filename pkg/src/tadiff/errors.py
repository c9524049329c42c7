"""Exception types shared across the package.

Everything raised on purpose derives from TadiffError so CLI entry points
can catch one base class and turn it into an exit code.
"""

from __future__ import annotations


class TadiffError(Exception):
    """Base class for all errors raised by this package."""


# -- chem ------------------------------------------------------------------

class SmilesParseError(TadiffError):
    """A SMILES string could not be parsed under the supported subset."""


# Tokenizers surface parser problems under this name.
ParseFailure = SmilesParseError


class EmptyInput(SmilesParseError):
    pass


class UnclosedRing(SmilesParseError):
    pass


class UnbalancedBranch(SmilesParseError):
    pass


class UnknownElement(SmilesParseError):
    pass


class InvalidGraph(TadiffError):
    """A molecular graph violates a structural requirement."""


# -- tokenization ----------------------------------------------------------

class EmptyCorpus(TadiffError):
    pass


class IdOutOfRange(TadiffError):
    pass


# -- triplets --------------------------------------------------------------

class DisconnectedGraph(InvalidGraph):
    pass


class MalformedSegment(TadiffError):
    pass


class IndexConflict(TadiffError):
    pass


class EmptyTriplets(TadiffError):
    pass


# -- schedule / diffusion --------------------------------------------------

class BadParams(TadiffError):
    pass


class ShapeMismatch(TadiffError):
    pass


class OutOfRange(TadiffError):
    pass


class EmptyProfile(TadiffError):
    pass


class TimestepOutOfRange(TadiffError):
    pass


class NonFiniteGradient(TadiffError):
    pass


# -- data / io -------------------------------------------------------------

class IoError(TadiffError):
    pass


class FormatError(TadiffError):
    pass


class BadFractions(TadiffError):
    pass


# -- metrics ---------------------------------------------------------------

class WidthMismatch(TadiffError):
    pass
