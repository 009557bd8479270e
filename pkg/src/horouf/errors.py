"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class HoroufError(Exception):
    """Base class for all toolkit errors."""


class UsageError(HoroufError):
    """Bad command line, bad argument combination, violated call contract."""


class DataError(HoroufError):
    """Problem with input data or files."""


class NumericError(HoroufError):
    """Non-finite value detected during computation."""


# corpus
class OutOfRange(DataError):
    pass


class EmptyClass(DataError):
    pass


class ManifestError(DataError):
    pass


# audio
class UnsupportedFormat(DataError):
    pass


class CorruptHeader(DataError):
    pass


class AllSilent(DataError):
    pass


class InvalidSpec(DataError):
    pass


class AugmentFailures(DataError):
    """One or more manifest entries failed to augment.

    Carries (entry_id, error) pairs; files produced before the failure are
    left on disk.
    """

    def __init__(self, failures):
        self.failures = list(failures)
        lines = ", ".join(f"{eid}: {err}" for eid, err in self.failures)
        super().__init__(f"{len(self.failures)} entries failed to augment: {lines}")


# binary formats (embeddings and checkpoints)
class BadMagic(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NonFinitePayload(DataError):
    pass


class MixedWidth(DataError):
    pass


class MissingFile(DataError):
    pass


# neural engine
class ShapeMismatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class StaleTrace(HoroufError):
    """The model was updated after the trace was recorded."""


# oracle
class MeanPlacementFailure(HoroufError):
    pass


class DimensionTooLarge(UsageError):
    pass
