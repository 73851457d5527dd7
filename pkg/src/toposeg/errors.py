"""Exception hierarchy with machine-parseable codes for the CLI."""


class ToposegError(Exception):
    code = "ERROR"
    exit_code = 1


class InvalidArgument(ToposegError):
    code = "INVALID_ARGUMENT"
    exit_code = 2


class ConfigurationError(ToposegError):
    code = "CONFIG"
    exit_code = 3


class DataFormatError(ToposegError):
    code = "DATA"
    exit_code = 4


class GenerationError(ToposegError):
    code = "GENERATION"
    exit_code = 5


class TrainingDivergence(ToposegError):
    code = "DIVERGENCE"
    exit_code = 6


class CorruptedRecord(ToposegError):
    code = "CORRUPT_RECORD"
    exit_code = 7
