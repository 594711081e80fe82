"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class RQEError(Exception):
    """Base class for every error raised by this package."""


class DataError(RQEError):
    """Input data violates a documented contract (CLI exit code 4)."""


class ClipParseError(DataError):
    def __init__(self, message, frame=None, landmark=None):
        self.frame = frame
        self.landmark = landmark
        where = []
        if frame is not None:
            where.append(f"frame {frame}")
        if landmark is not None:
            where.append(f"landmark {landmark}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ManifestError(DataError):
    pass


class NoReferenceFrame(DataError):
    """No frame has both shoulders and both hips present."""


class DegenerateReference(DataError):
    """Reference shoulder width or torso length is zero."""


class NoWristMotion(DataError):
    """Neither pose wrist is present in at least two frames."""


class ConfigError(RQEError):
    """Invalid configuration values or unknown keys (CLI exit code 2)."""


class ShapeError(RQEError):
    """Tensor shapes disagree with the model configuration."""
