from typing import Optional


class GGMotionError(Exception):
    """Base error carrying a process exit code and a human-readable detail"""

    exit_code = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def to_dict(self):
        return {"error": type(self).__name__, "detail": self.detail, "exit_code": self.exit_code}


class ConfigurationError(GGMotionError):
    """Shapes or hyper-parameters that cannot describe a valid model"""

    exit_code = 2


class UsageError(GGMotionError):
    exit_code = 2


class TopologyError(GGMotionError):
    """Parent list or group partition violates the skeleton invariants"""

    exit_code = 2


class SequenceFormatError(GGMotionError):
    exit_code = 2

    def __init__(self, detail: str, offset: int = 0):
        super().__init__(f"{detail} (byte offset {offset})")
        self.offset = offset


class CheckpointError(GGMotionError):
    exit_code = 2


class DomainError(GGMotionError):
    """Input outside the domain of a physical formula (e.g. zero-length link)"""

    exit_code = 3


class NumericalError(GGMotionError):
    exit_code = 3

    def __init__(self, detail: str, step: Optional[int] = None, report: Optional[dict] = None):
        super().__init__(detail if step is None else f"{detail} at step {step}")
        self.step = step
        self.report = report
