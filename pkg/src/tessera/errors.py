"""Exception hierarchy shared by every tessera module."""


class TesseraError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this class."""

    exit_code = 10


class Misaligned(TesseraError, ValueError):
    exit_code = 11


class CounterOverflow(TesseraError, ValueError):
    exit_code = 12


class KeyCleared(TesseraError):
    exit_code = 13


class UnsupportedKeySize(TesseraError, ValueError):
    exit_code = 14


class RsaEncryptFailure(TesseraError):
    exit_code = 15


class ProvisioningError(TesseraError):
    exit_code = 20


class OaepDecodeFailure(ProvisioningError):
    exit_code = 21


class AppBindingMismatch(ProvisioningError):
    exit_code = 22


class NormalWorldDenied(TesseraError):
    exit_code = 30


class AlreadyLocked(TesseraError):
    exit_code = 31


class PolicyError(TesseraError, ValueError):
    exit_code = 32


class IceNotProvisioned(TesseraError):
    exit_code = 40


class NotRunning(TesseraError):
    exit_code = 41


class InvalidTransition(TesseraError):
    exit_code = 42


class NoZeroLine(TesseraError, ValueError):
    exit_code = 50


class ImageFormatError(TesseraError):
    exit_code = 60


class BadMagic(ImageFormatError):
    exit_code = 61


class BadVersion(ImageFormatError):
    exit_code = 62


class TruncatedFile(ImageFormatError):
    exit_code = 63


class InsecureModeRefused(TesseraError):
    exit_code = 64
