"""
Exceptions raised by SkeAttnCLR

Errors caused by bad caller input also derive from ValueError so that callers
written against plain ValueError keep working.
"""


class SkeAttnError(Exception):
    """Base class for every error raised by the package"""


class ConfigError(SkeAttnError, ValueError):
    """A configuration file or value could not be used"""


class InvalidConfigError(ConfigError):
    """A configuration violates one of its invariants"""


class NonFiniteError(SkeAttnError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required"""


class NonFiniteLossError(NonFiniteError):
    """Training produced a non-finite loss. The offending batch is dumped to dump_path"""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class ZeroNormError(SkeAttnError, ArithmeticError):
    """Normalising a vector whose norm is (numerically) zero"""


class ToleranceExceededError(SkeAttnError, AssertionError):
    """Analytic and numeric gradients disagree"""

    def __init__(self, message, offending):
        super().__init__(message)
        self.offending = offending


class UnknownStreamError(SkeAttnError, ValueError):
    pass


class FormatError(SkeAttnError, ValueError):
    """A binary file does not follow its declared format"""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ShapeMismatchError(SkeAttnError, ValueError):
    pass


class DegenerateLengthError(SkeAttnError, ValueError):
    pass


class PartGroupMismatchError(SkeAttnError, ValueError):
    pass


class HeadDivisibilityError(SkeAttnError, ValueError):
    pass


class StructureMismatchError(SkeAttnError, ValueError):
    pass


class EmptyBankError(SkeAttnError, ValueError):
    pass


class OutOfRangeError(SkeAttnError, ValueError):
    pass


class EmptyTrainSetError(SkeAttnError, ValueError):
    pass


class ClassMissingError(SkeAttnError, ValueError):
    pass


class StreamMismatchError(SkeAttnError, ValueError):
    pass
