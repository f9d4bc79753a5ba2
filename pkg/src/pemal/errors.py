"""Exception types shared across the toolkit."""


class MalformedPE(ValueError):
    """Core PE headers are unusable.

    Raised only when the DOS header, PE signature, COFF header, Optional
    Header, or section table cannot be parsed at all.  Damaged sub-structures
    (imports, exports, ...) degrade to empty values instead.  ``offset`` is
    the file offset of the first violation.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset:#x})")
        self.offset = offset


class ParseError(ValueError):
    """A JSONL line could not be turned into a sample. Carries the 1-based line number."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class DimensionError(ValueError):
    """A feature row does not have the expected number of columns."""


class CorruptCache(ValueError):
    """Binary feature cache failed magic, length, or CRC validation."""


class CorruptModelFile(ValueError):
    """Model file failed magic, length, or CRC validation."""


class EmptyDataset(ValueError):
    """An operation that needs at least one sample received none."""


class NonBinaryLabels(ValueError):
    """Classifier training requires labels in {0, 1}."""


class DimensionMismatch(ValueError):
    """Input width does not match what the model or scaler was built for."""


class DegenerateLabels(ValueError):
    """Ranking metrics need at least one positive and one negative sample."""


class EmptyMask(ValueError):
    """A feature mask must include at least one feature set."""
