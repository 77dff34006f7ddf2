"""Exception hierarchy shared across the toolkit.

DataError covers everything wrong with inputs on disk or with shapes/params
handed between modules; NumericsError covers NaN/Inf blow-ups at run time.
The CLI maps DataError -> exit 2 and NumericsError -> exit 3.
"""


class MelRefineError(Exception):
    """Base class for all toolkit errors."""


class DataError(MelRefineError):
    """Invalid input data, file, or parameter combination."""


class AudioFormatError(DataError):
    """Audio clip cannot be used: wrong channel count, sample rate, or codec."""


class InsufficientClipsError(DataError):
    """Corpus directory holds fewer usable clips than requested."""


class ShapeMismatchError(DataError):
    """Array shapes are inconsistent with parameters or with each other."""


class PairFormatError(DataError):
    """Paired-example record is corrupt or was built with other parameters."""


class CodecError(DataError):
    """Spectrogram-image codec cannot encode/decode the given input."""


class CheckpointError(DataError):
    """Checkpoint file is unreadable or structurally invalid."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class NumericsError(MelRefineError):
    """A loss or parameter became NaN/Inf during optimization."""
