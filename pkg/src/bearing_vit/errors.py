"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: :class:`UsageError` -> 2,
:class:`DataError` -> 3, :class:`NumericError` -> 4.
"""

from __future__ import annotations


class BearingVitError(Exception):
    """Root of every error raised deliberately by this package."""


class UsageError(BearingVitError, ValueError):
    """Bad configuration or arguments."""


class DataError(BearingVitError, ValueError):
    """Input data is missing, malformed or unusable."""


class NumericError(BearingVitError, ArithmeticError):
    """A computation produced non-finite values."""


# signal_io
class UnreadableFile(DataError):
    pass


class MalformedFile(DataError):
    pass


class MalformedHeader(MalformedFile):
    pass


class VariableNotFound(DataError):
    def __init__(self, hint: str | None, candidates: list[str]):
        self.hint = hint
        self.candidates = list(candidates)
        super().__init__(
            f"no variable matching {hint!r}; available: {', '.join(self.candidates) or '(none)'}"
        )


class UnsupportedMatFeature(DataError):
    pass


class EmptySignal(DataError):
    pass


class InsufficientData(DataError):
    def __init__(self, label: str, detail: str = ""):
        self.label = label
        msg = f"class {label!r} cannot populate train/val/test"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class UnknownLabel(DataError):
    pass


# synth
class InvalidSpec(UsageError):
    pass


# stft
class NotPowerOfTwo(UsageError):
    pass


class InvalidParams(UsageError):
    pass


class SignalTooShort(DataError):
    pass


class DegenerateSpectrogram(DataError):
    pass


# autodiff / model
class ShapeMismatch(BearingVitError, ValueError):
    pass


class NonFiniteError(NumericError):
    def __init__(self, op: str):
        self.op = op
        super().__init__(f"non-finite value produced by op {op!r}")


class LabelOutOfRange(BearingVitError, ValueError):
    pass


class NonScalarLoss(BearingVitError, ValueError):
    pass


class IndivisibleImage(ShapeMismatch):
    pass


# trainer / evaluator
class EmptyTrainSet(DataError):
    pass


class EmptyDataset(DataError):
    pass


class DivergedLoss(NumericError):
    pass


class LengthMismatch(BearingVitError, ValueError):
    pass


class EmptyInput(BearingVitError, ValueError):
    pass


class IdOutOfRange(BearingVitError, ValueError):
    pass


class ConfigMismatch(DataError):
    pass


class ConfigError(UsageError):
    pass


class CheckpointError(DataError):
    pass
