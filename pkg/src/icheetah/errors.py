"""Exception taxonomy for the toolkit.

Every error raised by the library derives from IcheetahError so callers can
catch one base class.  The CLI maps subclasses to exit codes (format -> 3,
key mismatch -> 4, quality gate -> 5).
"""


class IcheetahError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(IcheetahError):
    """Invalid CKKS parameter set (bad ring degree, chain, scale, sigma)."""


class EncodingOverflowError(IcheetahError):
    """Scaled value does not fit the active modulus product."""


class DomainError(IcheetahError):
    """Input outside an operation's mathematical domain (e.g. negative MSE)."""


class DimensionError(IcheetahError):
    """Mismatched image or vector shapes."""


class LevelMismatchError(IcheetahError):
    """Operands sit at different modulus-chain levels."""


class LevelExhaustedError(IcheetahError):
    """No prime left to drop (rescale at level 0, filter on spent image)."""


class ScaleMismatchError(IcheetahError):
    """Operand scaling factors differ beyond the relative tolerance."""


class UnsupportedOperationError(IcheetahError):
    """Operation undefined for the operand shape (e.g. mul of degree-2 inputs)."""


class KeyMismatchError(IcheetahError):
    """Material produced under a different key set or parameter set."""


class FormatError(IcheetahError):
    """Malformed or unsupported file content (BMP/PNG/ICHK/ICHI/ICHC)."""


class CacheMissError(IcheetahError):
    """Pixel value absent from a scan cache and fresh fallback disabled."""


class PoolError(IcheetahError):
    """Zero-pool construction or draw failed its invariants."""


class QualityGateError(IcheetahError):
    """Benchmark quality gate violated (MSE/PSNR out of bounds)."""
