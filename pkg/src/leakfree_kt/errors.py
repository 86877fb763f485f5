"""Exception hierarchy. Each class carries the CLI exit code and error category."""


class KTError(Exception):
    exit_code = 1
    category = "error"


class UsageError(KTError):
    exit_code = 2
    category = "usage"


class IngestIOError(KTError):
    exit_code = 3
    category = "io"


class DataValidationError(KTError):
    exit_code = 4
    category = "data-validation"


class IngestionError(DataValidationError):
    """A row of an input file could not be parsed."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class EmptyInputError(DataValidationError):
    pass


class UndefinedMetricError(DataValidationError):
    pass


class InconclusiveProbeError(DataValidationError):
    pass


class ContractViolation(KTError):
    exit_code = 4
    category = "contract"


class TrainingDivergence(KTError):
    exit_code = 5
    category = "training-divergence"

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class FairnessViolation(KTError):
    exit_code = 6
    category = "fairness-violation"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
