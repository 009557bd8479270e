"""Offline converter from WAV recordings to HRF frame-embedding files."""

__version__ = "0.1.0"

from .extract import DEFAULT_ENCODER, ExtractJob, ExtractResult, extract
from .errors import BadAudio, EncoderUnavailable, ExtractorError
