from typing import Optional


class PVG4DError(Exception):
    """Base error; the CLI maps it to a nonzero exit code and a one-line reason"""

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class DegenerateDepth(PVG4DError):
    """Point at or behind the near plane"""


class ResolutionMismatch(PVG4DError):
    exit_code = 3


class NonFiniteGradient(PVG4DError):
    exit_code = 4

    def __init__(self, detail: str, group: Optional[str] = None, dump_path: Optional[str] = None):
        super().__init__(detail)
        self.group = group
        self.dump_path = dump_path


class SpecInvalid(PVG4DError):
    exit_code = 2


class MissingMeta(PVG4DError):
    """Pseudo-frame was not produced by an oracle that records its corruptions"""


class ConfigError(PVG4DError):
    exit_code = 2

    def __init__(self, detail: str, path: Optional[str] = None, location: Optional[str] = None):
        where = path or "<config>"
        if location:
            where = f"{where}:{location}"
        super().__init__(f"{where}: {detail}")
        self.path = path
        self.location = location


class CheckpointError(PVG4DError):
    exit_code = 5
