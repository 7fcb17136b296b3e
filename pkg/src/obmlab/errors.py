"""Exception hierarchy shared by all obmlab modules."""


class ObmLabError(Exception):
    """Base class for every error raised by obmlab."""


class InvalidInput(ObmLabError, ValueError):
    """Malformed kernel, function, geometry or spec input."""


class InvalidKernel(InvalidInput):
    pass


class UnknownKernelName(InvalidInput, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NoUniqueStationary(ObmLabError):
    pass


class MixingNotCertified(ObmLabError):
    pass


class SingularFundamentalMatrix(ObmLabError):
    pass


class IndexOutOfRange(ObmLabError, IndexError):
    pass


class RegimeViolation(InvalidInput):
    pass


class GeometryInvalid(InvalidInput):
    pass


class DimensionMismatch(InvalidInput):
    pass


class TraceNotOne(ObmLabError):
    pass


class InsufficientGrid(ObmLabError):
    pass
