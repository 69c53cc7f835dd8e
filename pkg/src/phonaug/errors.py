"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and every other PhonaugError
(plus I/O failures) to exit code 1.
"""


class PhonaugError(Exception):
    """Base class for all package-specific errors."""


class ParseError(PhonaugError):
    """A transcript file line could not be parsed; message names the line."""


class IntegrityError(PhonaugError):
    """Duplicate utterance id within one dataset."""


class RangeError(PhonaugError):
    """A value lies outside its legal range (e.g. log-probability > 0)."""


class CapacityError(PhonaugError):
    """A subsampling axis (intents/speakers/recordings) cannot be satisfied."""


class VocabularyError(PhonaugError):
    """A phone symbol is missing from the vocabulary."""


class FormatError(PhonaugError):
    """Unsupported or corrupt audio file."""


class ConfigError(PhonaugError):
    """Invalid or inconsistent configuration."""


class DataError(PhonaugError):
    """Data is unusable for the requested operation (empty split, too short)."""
