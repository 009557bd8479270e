class ExtractorError(Exception):
    """Base class for extractor failures."""


class EncoderUnavailable(ExtractorError):
    """The requested encoder could not be loaded."""


class BadAudio(ExtractorError):
    """One input file is unreadable or violates the mono 16 kHz contract."""
