from __future__ import annotations


class TsaeError(Exception):
    """Base error. `exit_code` is what the CLI returns when this escapes a command."""

    exit_code = 1


class ConfigError(TsaeError):
    exit_code = 1

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class ContractError(TsaeError, ValueError):
    exit_code = 1


class ShapeError(TsaeError, ValueError):
    exit_code = 1


class CheckpointError(TsaeError):
    exit_code = 1


class DataError(TsaeError):
    exit_code = 2


class TsParseError(DataError):
    def __init__(self, message: str, path: str = "", line: int | None = None):
        where = path
        if line is not None:
            where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class ChecksumError(DataError):
    exit_code = 2


class NumericalError(TsaeError):
    exit_code = 3


class DegenerateRowError(NumericalError, ValueError):
    pass


class GenerationDivergedError(NumericalError):
    def __init__(self, step: int, sample: int | None = None):
        who = f"sample {sample}, " if sample is not None else ""
        super().__init__(f"generation diverged ({who}step {step}): non-finite decoder output")
        self.step = step
        self.sample = sample


class CompatibilityError(TsaeError):
    exit_code = 4
