class TranslitError(Exception):
    """Base class of every error raised by the translit toolkit."""


class ConfigError(TranslitError):
    """A configuration value or configuration file is invalid."""
