"""Exception hierarchy shared by every slotalign module."""

from __future__ import annotations


class SlotAlignError(Exception):
    """Base class for all errors raised by slotalign."""


class InvalidInputError(SlotAlignError, ValueError):
    pass


class InvalidMaskError(InvalidInputError):
    pass


class NumericError(SlotAlignError, ArithmeticError):
    pass


class GradientCheckError(NumericError):
    pass


class StateError(SlotAlignError, RuntimeError):
    pass


class CapacityError(InvalidInputError):
    pass


class StructureError(InvalidInputError):
    pass


class TrainingError(SlotAlignError, RuntimeError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch


class ParseError(SlotAlignError, ValueError):
    """Malformed text; ``offset`` is the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class FormatError(SlotAlignError, ValueError):
    """A binary or JSON artifact does not match its declared layout."""


class UnmatchedIdError(InvalidInputError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"unmatched utterance ids: {', '.join(self.ids)}")
