'''
Exception hierarchy shared by the PSR modules.

Every error raised on purpose derives from `PsrError`, so the CLI can
report it with one handler.
'''


class PsrError(Exception):
    pass


class ConfigInvalid(PsrError, ValueError):
    pass


class InvalidSymbol(PsrError, ValueError):
    pass


class LengthMismatch(PsrError, ValueError):
    pass


class PayloadTooLong(PsrError, ValueError):
    pass


class FramingError(PsrError, ValueError):
    pass


class IqFormatError(PsrError):
    pass


class BadMagic(IqFormatError):
    pass


class TruncatedFile(IqFormatError):
    pass


class VersionUnsupported(IqFormatError):
    pass


class IoError(PsrError, OSError):
    def __init__(self, path, reason):
        super().__init__(f'{path}: {reason}')
        self.path = path
        self.reason = reason

    def __str__(self):
        return f'{self.path}: {self.reason}'


class CalibrationError(PsrError):
    pass
