"""Exception types raised across the package."""


class Speech2PoseError(Exception):
    """Base class for all errors raised by speech2pose."""


class SilentInput(Speech2PoseError, ValueError):
    pass


class TooShort(Speech2PoseError, ValueError):
    pass


class UnknownCharacter(Speech2PoseError, KeyError):
    def __init__(self, char):
        super().__init__(char)
        self.char = char

    def __str__(self):
        return f"character {self.char!r} (U+{ord(self.char):04X}) missing from pinyin table"


class BehindCamera(Speech2PoseError, ValueError):
    pass


class NonFinite(Speech2PoseError, FloatingPointError):
    pass


class NonFiniteLoss(Speech2PoseError, FloatingPointError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class LengthMismatch(Speech2PoseError, ValueError):
    pass


class DimMismatch(Speech2PoseError, ValueError):
    pass


class OutOfRange(Speech2PoseError, ValueError):
    pass


class FpsMismatch(Speech2PoseError, ValueError):
    pass


class MarkerMissing(Speech2PoseError, LookupError):
    def __init__(self, part):
        super().__init__(f"no pixels of the {part} marker color found")
        self.part = part


class MalformedHeader(Speech2PoseError, ValueError):
    pass


class MissingSidecar(Speech2PoseError, FileNotFoundError):
    pass


class TimestampBeyondAudio(Speech2PoseError, ValueError):
    pass
