"""Exception types shared across the package.

DataError covers bad user input (shapes, values, file contents) and maps to
CLI exit code 2. NumericalError covers runtime numerical failure (divergence,
overflow, singular systems) and maps to exit code 3. FormatError is a
DataError specialization for the RFT/CSV readers and carries a short
machine-readable code.
"""


class DataError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class FormatError(DataError):
    # code is a stable short slug, e.g. "bad-magic", "length-mismatch"
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code
