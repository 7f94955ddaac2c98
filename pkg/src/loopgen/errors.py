"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2, numeric failures exit 3.
"""


class LoopGenError(Exception):
    exit_code = 1


class DimensionError(LoopGenError, ValueError):
    """Operand extents are incompatible."""


class ParameterError(LoopGenError, ValueError):
    """An argument is outside its admissible range."""


class CapacityError(LoopGenError, ValueError):
    """Temporal extent exceeds the positional table."""


class ContractError(LoopGenError, RuntimeError):
    """A caller-supplied callable broke its contract."""


class ConfigError(LoopGenError, ValueError):
    pass


class ProviderError(LoopGenError, RuntimeError):
    exit_code = 2


class DataError(LoopGenError, ValueError):
    exit_code = 2


class TrainingError(LoopGenError, RuntimeError):
    exit_code = 3
