"""Exception hierarchy. ``category`` is what the CLI prints on failure."""


class PdeclError(Exception):
    category = "error"


class InputError(PdeclError, ValueError):
    category = "input"


class ConfigurationError(PdeclError, ValueError):
    category = "config"


class SolverError(PdeclError, RuntimeError):
    category = "solver"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class FormatError(PdeclError, ValueError):
    category = "format"
