"""Exception taxonomy shared across the library.

The CLI maps these onto its exit codes, so raising the right class is part
of the contract: ConfigError -> 2, I/O and format errors -> 3,
NumericError -> 4.
"""


class CalmError(Exception):
    """Base class for all library errors."""


class DimensionError(CalmError):
    """Operand shapes are incompatible. Message names both shapes."""


class NumericError(CalmError):
    """Non-finite values where finite ones are required."""


class DegenerateVectorError(CalmError):
    """A vector with (near-)zero norm reached a normalizing operation."""


class ContractError(CalmError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class StoreFormatError(CalmError):
    """An embedding store file failed validation. Names the offending field."""


class ConfigError(CalmError):
    """A config document is invalid: unknown key, bad value, bad combination."""


class EmptyInputError(CalmError):
    """An operation received an empty batch/sequence it cannot reduce."""
