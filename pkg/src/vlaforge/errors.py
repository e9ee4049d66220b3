"""Exception taxonomy shared by every module."""


class VlaForgeError(Exception):
    """Base class for all library errors."""


class ValidationError(VlaForgeError):
    """A raw sample violates the observation/action contract."""


class ShapeError(VlaForgeError):
    """Dimension or shape mismatch between arrays."""


class EmptyDataset(VlaForgeError):
    """An operation that needs data received none."""


class CodecError(VlaForgeError):
    """Tokenizer/codec failure (unknown token, out-of-range coefficient, bad run)."""


class DomainError(VlaForgeError):
    """A numeric argument is outside its mathematical domain."""


class NumericsError(VlaForgeError):
    """Non-finite values where finite ones are required (aborts the step)."""


class RegistryError(VlaForgeError):
    """Unknown backbone/head id."""


class FormatError(VlaForgeError):
    """Malformed file or wire payload."""


class IntegrityError(VlaForgeError):
    """Internally inconsistent on-disk artifact (counts, shapes)."""


class SpecError(VlaForgeError):
    """Invalid mixture or suite specification."""


class ProtocolError(VlaForgeError):
    """Environment or service protocol misuse (e.g. stepping a finished episode)."""


class ConfigError(VlaForgeError):
    """Config file rejected; message carries the offending key path."""


class TransportError(VlaForgeError):
    """Client gave up after transport-level failures."""


class ServerError(VlaForgeError):
    """Error envelope returned by the policy server."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.server_message = message
